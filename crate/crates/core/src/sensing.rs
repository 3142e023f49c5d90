//! Monostatic sensing at the measurement level.
//!
//! Each AP observes every target scatterer as a noisy (round-trip delay,
//! Doppler, azimuth) triple. Noise variances follow the post-matched-filter
//! SNR of the scatterer, including the beamforming gain of the AP's
//! predicted beam. The central unit fuses all triples into a centroid and a
//! speed estimate and predicts where to point next frame's beams.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SimError};
use crate::scalar::{Real, SPEED_OF_LIGHT};
use crate::scene::{angle_of, AccessPoint, Point2D, TargetState};

/// Scatterers whose beam gain `|ϱ|²` falls below this are not fused.
pub const MIN_BEAM_GAIN_SQ: f64 = 1e-6;

/// Noise-free observables of one scatterer seen from one AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScattererTruth<T> {
    /// AP → scatterer distance (m).
    pub distance: T,
    /// Global azimuth AP → scatterer (rad).
    pub azimuth: T,
    /// Target speed projected on the line of sight (m/s).
    pub radial_speed: T,
    /// Round-trip delay `2d/c` (s).
    pub delay: T,
    /// Doppler `2 v cos θ f_c / c` (Hz).
    pub doppler: T,
    /// Radar cross section, unit-variance circular Gaussian.
    pub rcs: Complex<T>,
}

/// Measurement-noise constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<T> {
    pub a_tau: T,
    pub a_mu: T,
    pub a_theta: T,
    /// Matched-filter processing gain `G`.
    pub mf_gain: T,
    /// Array gain `κ = √(N_t N_r)`.
    pub array_gain: T,
    /// Receiver noise power σ² (W).
    pub noise_power: T,
}

impl<T: Real> NoiseModel<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_tau, self.a_mu, self.a_theta, self.mf_gain, self.array_gain, self.noise_power];
        if all.iter().all(|v| *v > T::zero() && v.is_finite()) {
            Ok(())
        } else {
            Err(SimError::domain("noise model constants must be positive and finite"))
        }
    }
}

/// Variances of the delay, Doppler and angle measurement errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementVariances<T> {
    pub delay: T,
    pub doppler: T,
    pub angle: T,
}

impl<T: Real> MeasurementVariances<T> {
    pub fn zero() -> Self {
        Self { delay: T::zero(), doppler: T::zero(), angle: T::zero() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement<T> {
    pub ap_index: usize,
    pub scatterer_index: usize,
    pub delay_hat: T,
    pub doppler_hat: T,
    pub angle_hat: T,
    pub var_delay: T,
    pub var_doppler: T,
    pub var_angle: T,
}

/// All measurements of one sensing slot, plus the AP positions they are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch<T> {
    pub ap_positions: Vec<Point2D<T>>,
    pub measurements: Vec<Measurement<T>>,
}

impl<T: Real> MeasurementBatch<T> {
    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedEstimate<T> {
    pub x_hat: T,
    pub y_hat: T,
    pub v_hat: T,
}

impl<T: Real> FusedEstimate<T> {
    pub fn centroid(&self) -> Point2D<T> {
        Point2D::new(self.x_hat, self.y_hat)
    }
}

/// Beam-pointing state carried from one frame to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState<T> {
    pub predicted_centroid: Point2D<T>,
    /// Global azimuth of the predicted centroid from each AP.
    pub predicted_angle_per_ap: Vec<T>,
    /// Estimate the prediction was made from; reused if the next fusion fails.
    pub last_estimate: FusedEstimate<T>,
}

/// Noise-free delay, Doppler and azimuth of each scatterer seen from `ap`.
///
/// `rcs[k]` is the reflectivity drawn for scatterer `k` in this frame.
pub fn ground_truth_observables<T: Real>(
    ap: Point2D<T>,
    scatterers: &[Point2D<T>],
    target: &TargetState<T>,
    carrier_freq: T,
    rcs: &[Complex<T>],
) -> Result<Vec<ScattererTruth<T>>> {
    if scatterers.is_empty() {
        return Err(SimError::domain("no scatterers"));
    }
    if rcs.len() != scatterers.len() {
        return Err(SimError::domain("one RCS value per scatterer required"));
    }
    let c = T::of(SPEED_OF_LIGHT);
    let two = T::of(2.0);
    let heading = target.heading_angle();
    scatterers
        .iter()
        .zip(rcs)
        .map(|(&p, &rcs)| {
            let distance = ap.distance(p);
            if !(distance > T::zero()) {
                return Err(SimError::domain("scatterer coincides with AP"));
            }
            let azimuth = angle_of(ap, p)?;
            let radial_speed = target.speed * (azimuth - heading).cos();
            Ok(ScattererTruth {
                distance,
                azimuth,
                radial_speed,
                delay: two * distance / c,
                doppler: two * radial_speed * carrier_freq / c,
                rcs,
            })
        })
        .collect()
}

/// `β = ε / (2d)²`.
pub fn reflection_gain<T: Real>(d: T, rcs: Complex<T>) -> Result<Complex<T>> {
    if !(d > T::zero()) {
        return Err(SimError::domain("reflection gain needs positive distance"));
    }
    let two_d = T::of(2.0) * d;
    Ok(rcs / (two_d * two_d))
}

/// Beamforming gain `ϱ = a(θ)† a(φ)` of an `n`-element ULA (array-local angles).
///
/// Evaluated through the Dirichlet kernel; falls back to direct summation
/// when the phase step is at a multiple of 2π.
pub fn steering_inner_product<T: Real>(theta_true: T, phi_pred: T, n: usize) -> Complex<T> {
    let x = T::PI() * (theta_true.cos() - phi_pred.cos());
    let nf = T::of_usize(n);
    let half = T::of(0.5);
    let denom = (x * half).sin();
    if denom.abs() < T::of(1e-9) {
        let sum = (0..n).fold(Complex::new(T::zero(), T::zero()), |acc, i| {
            acc + Complex::from_polar(T::one(), x * T::of_usize(i))
        });
        return sum / nf;
    }
    let mag = (nf * x * half).sin() / (nf * denom);
    Complex::from_polar(mag, (nf - T::one()) * x * half)
}

/// `σ²_i = a_i² σ² / (p G |κβ|² |ϱ|²)` for delay, Doppler and angle.
pub fn measurement_variances<T: Real>(
    nm: &NoiseModel<T>,
    tx_power: T,
    beta: Complex<T>,
    rho: Complex<T>,
) -> Result<MeasurementVariances<T>> {
    let gain_sq = rho.norm_sqr();
    if !(gain_sq > T::zero()) {
        return Err(SimError::Unmeasurable { gain_sq: gain_sq.to_f64_lossy() });
    }
    let snr = tx_power * nm.mf_gain * (beta * nm.array_gain).norm_sqr() * gain_sq / nm.noise_power;
    if !(snr > T::zero()) || !snr.is_finite() {
        return Err(SimError::Unmeasurable { gain_sq: gain_sq.to_f64_lossy() });
    }
    Ok(MeasurementVariances {
        delay: nm.a_tau * nm.a_tau / snr,
        doppler: nm.a_mu * nm.a_mu / snr,
        angle: nm.a_theta * nm.a_theta / snr,
    })
}

/// Per-scatterer random draws for one AP in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScattererDraws<T> {
    pub rcs: Complex<T>,
    /// Standard-normal draws for the delay, Doppler and angle errors.
    pub unit_noise: [T; 3],
}

impl<T: Real> ScattererDraws<T> {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut n = || T::of(rng.sample::<f64, _>(StandardNormal));
        let half = T::of(std::f64::consts::FRAC_1_SQRT_2);
        let re = n() * half;
        let im = n() * half;
        Self { rcs: Complex::new(re, im), unit_noise: [n(), n(), n()] }
    }
}

/// `truth + √var · z` for one scatterer.
pub fn apply_noise<T: Real>(
    ap_index: usize,
    scatterer_index: usize,
    truth: &ScattererTruth<T>,
    var: &MeasurementVariances<T>,
    unit_noise: [T; 3],
) -> Measurement<T> {
    Measurement {
        ap_index,
        scatterer_index,
        delay_hat: truth.delay + var.delay.sqrt() * unit_noise[0],
        doppler_hat: truth.doppler + var.doppler.sqrt() * unit_noise[1],
        angle_hat: truth.azimuth + var.angle.sqrt() * unit_noise[2],
        var_delay: var.delay,
        var_doppler: var.doppler,
        var_angle: var.angle,
    }
}

/// Draws fresh Gaussian errors for each scatterer of one AP. `None`
/// variances mark unmeasurable scatterers, which are left out.
pub fn synthesize_measurements<T: Real, R: Rng + ?Sized>(
    ap_index: usize,
    truth: &[ScattererTruth<T>],
    variances: &[Option<MeasurementVariances<T>>],
    rng: &mut R,
) -> Vec<Measurement<T>> {
    truth
        .iter()
        .zip(variances)
        .enumerate()
        .filter_map(|(k, (t, v))| {
            let v = v.as_ref()?;
            let z = [
                T::of(rng.sample::<f64, _>(StandardNormal)),
                T::of(rng.sample::<f64, _>(StandardNormal)),
                T::of(rng.sample::<f64, _>(StandardNormal)),
            ];
            Some(apply_noise(ap_index, k, t, v, z))
        })
        .collect()
}

/// One AP's measurements of all scatterers, given the frame's random draws.
///
/// Scatterers in a deep beam null (`|ϱ|² < MIN_BEAM_GAIN_SQ`) are dropped.
pub fn sense_from_ap<T: Real>(
    ap_index: usize,
    ap: &AccessPoint<T>,
    scatterers: &[Point2D<T>],
    target: &TargetState<T>,
    carrier_freq: T,
    predicted_angle: T,
    nm: &NoiseModel<T>,
    draws: &[ScattererDraws<T>],
) -> Result<Vec<Measurement<T>>> {
    let rcs: Vec<_> = draws.iter().map(|d| d.rcs).collect();
    let truth = ground_truth_observables(ap.position, scatterers, target, carrier_freq, &rcs)?;
    let phi_local = ap.local_angle(predicted_angle);
    let floor = T::of(MIN_BEAM_GAIN_SQ);
    let mut out = Vec::with_capacity(truth.len());
    for (k, (t, d)) in truth.iter().zip(draws).enumerate() {
        let rho = steering_inner_product(ap.local_angle(t.azimuth), phi_local, ap.n_tx);
        if rho.norm_sqr() < floor {
            continue;
        }
        let beta = reflection_gain(t.distance, t.rcs)?;
        match measurement_variances(nm, ap.tx_power, beta, rho) {
            Ok(var) => out.push(apply_noise(ap_index, k, t, &var, d.unit_noise)),
            Err(SimError::Unmeasurable { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Centroid estimate: every polar measurement is converted to a global
/// point `AP + (cτ̂/2)(cos θ̂, sin θ̂)` and the points are averaged.
pub fn fuse_position<T: Real>(batch: &MeasurementBatch<T>) -> Result<Point2D<T>> {
    if batch.is_empty() {
        return Err(SimError::EstimationFailure("empty measurement batch".into()));
    }
    let half_c = T::of(SPEED_OF_LIGHT * 0.5);
    let mut sx = T::zero();
    let mut sy = T::zero();
    for m in &batch.measurements {
        let ap = batch
            .ap_positions
            .get(m.ap_index)
            .ok_or_else(|| SimError::domain("measurement references unknown AP"))?;
        let r = half_c * m.delay_hat;
        sx = sx + ap.x + r * m.angle_hat.cos();
        sy = sy + ap.y + r * m.angle_hat.sin();
    }
    let n = T::of_usize(batch.measurements.len());
    Ok(Point2D::new(sx / n, sy / n))
}

/// Speed along the known heading from per-AP weighted least squares on
/// the Doppler measurements, averaged over APs.
///
/// An AP whose scatterers are all perpendicular to the heading carries no
/// speed information and is skipped.
pub fn fuse_velocity<T: Real>(batch: &MeasurementBatch<T>, heading_angle: T, carrier_freq: T) -> Result<T> {
    let n_aps = batch.ap_positions.len();
    let mut num = vec![T::zero(); n_aps];
    let mut den = vec![T::zero(); n_aps];
    let mut weight = vec![T::zero(); n_aps];
    for m in &batch.measurements {
        if m.ap_index >= n_aps {
            return Err(SimError::domain("measurement references unknown AP"));
        }
        let cos = (m.angle_hat - heading_angle).cos();
        let w = T::one() / m.var_doppler;
        num[m.ap_index] = num[m.ap_index] + m.doppler_hat * cos * w;
        den[m.ap_index] = den[m.ap_index] + cos * cos * w;
        weight[m.ap_index] = weight[m.ap_index] + w;
    }
    let tiny = T::of(1e-12);
    let per_ap: Vec<T> = (0..n_aps)
        .filter(|&i| weight[i] > T::zero() && weight[i].is_finite() && den[i] > tiny * weight[i])
        .map(|i| num[i] / den[i])
        .collect();
    if per_ap.is_empty() {
        return Err(SimError::EstimationFailure("no AP observed a usable Doppler projection".into()));
    }
    let mean = per_ap.iter().copied().sum::<T>() / T::of_usize(per_ap.len());
    Ok(T::of(SPEED_OF_LIGHT) / (T::of(2.0) * carrier_freq) * mean)
}

/// Full fusion step: centroid and speed.
pub fn fuse<T: Real>(batch: &MeasurementBatch<T>, heading_angle: T, carrier_freq: T) -> Result<FusedEstimate<T>> {
    let c = fuse_position(batch)?;
    let v = fuse_velocity(batch, heading_angle, carrier_freq)?;
    Ok(FusedEstimate { x_hat: c.x, y_hat: c.y, v_hat: v })
}

/// Constant-velocity prediction one frame ahead and the resulting beam
/// directions for every AP.
pub fn predict_track<T: Real>(
    fused: &FusedEstimate<T>,
    heading: Point2D<T>,
    frame_duration: T,
    aps: &[AccessPoint<T>],
) -> Result<TrackState<T>> {
    let predicted = fused.centroid() + heading * (fused.v_hat * frame_duration);
    let angles = aps
        .iter()
        .map(|ap| {
            angle_of(ap.position, predicted)
                .map_err(|_| SimError::domain("predicted centroid coincides with an AP"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackState {
        predicted_centroid: predicted,
        predicted_angle_per_ap: angles,
        last_estimate: *fused,
    })
}

/// Track state for perfect acquisition at `target`.
pub fn initial_track<T: Real>(target: &TargetState<T>, aps: &[AccessPoint<T>]) -> Result<TrackState<T>> {
    let est = FusedEstimate {
        x_hat: target.centroid.x,
        y_hat: target.centroid.y,
        v_hat: target.speed,
    };
    predict_track(&est, target.heading, T::zero(), aps)
}
