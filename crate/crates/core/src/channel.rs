//! Ray-traced MIMO channels between APs and UEs.
//!
//! Each AP → UE block is the sum of at most five rank-one terms: the direct
//! path (present unless the target blocks it) and one specular bounce off
//! each visible target face. The same tracer builds the ground-truth channel
//! from the true target pose and the sensing-assisted estimate from the
//! fused pose. The LS baseline perturbs the true channel with pilot noise.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::CMatrix;
use crate::scalar::Real;
use crate::scene::{
    angle_of, los_exists, reflection_point, target_surfaces, AccessPoint, Point2D, Scene, Surface, TargetState,
    UserEquipment,
};

/// Unit-norm ULA response `(1/√n)[1, e^{-jπcosθ}, …, e^{-jπ(n-1)cosθ}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector<T> {
    pub entries: Vec<Complex<T>>,
}

impl<T: Real> SteeringVector<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> T {
        self.entries.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt()
    }
}

/// ULA steering vector for array-local angle `theta`.
pub fn steering<T: Real>(theta: T, n: usize) -> SteeringVector<T> {
    let amp = T::one() / T::of_usize(n).sqrt();
    let step = -T::PI() * theta.cos();
    SteeringVector {
        entries: (0..n)
            .map(|i| Complex::from_polar(amp, step * T::of_usize(i)))
            .collect(),
    }
}

/// Effective receive aperture `λ(1 + (n − 1)|sin θ|)`.
pub fn effective_aperture<T: Real>(theta_aoa: T, n_ue: usize, wavelength: T) -> T {
    wavelength * (T::one() + T::of_usize(n_ue.saturating_sub(1)) * theta_aoa.sin().abs())
}

/// Floor on `|sin θ|` in [`beam_footprint`], keeping endfire beams finite.
pub const FOOTPRINT_SIN_FLOOR: f64 = 0.05;

/// Angular footprint of an `n`-element transmit beam steered to `theta`:
/// the half-power beamwidth `2 / (n |sin θ|)`, with `|sin θ|` floored.
pub fn beam_footprint<T: Real>(theta: T, n: usize) -> T {
    let s = theta.sin().abs().max(T::of(FOOTPRINT_SIN_FLOOR));
    T::of(2.0) / (T::of_usize(n) * s)
}

/// Signature of a pluggable beam-footprint model.
pub type FootprintFn<T> = fn(T, usize) -> T;

/// Reflection properties of one target face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReflectionProps<T> {
    /// Phase shift applied on reflection (radians).
    pub phase_shift: T,
    /// Specular reflectance in (0, 1).
    pub specular: T,
    /// Diffuse reflectance in (0, 1).
    pub diffuse: T,
    /// Reflection efficiency.
    pub efficiency: T,
}

impl<T: Real> Default for SurfaceReflectionProps<T> {
    fn default() -> Self {
        Self {
            phase_shift: T::PI(),
            specular: T::of(0.7),
            diffuse: T::of(0.2),
            efficiency: T::one(),
        }
    }
}

/// Everything the ray tracer needs besides the scene and target.
#[derive(Debug, Clone, Copy)]
pub struct ChannelModel<T> {
    pub wavelength: T,
    /// Per-face reflection properties, indexed by surface id − 1.
    pub surfaces: [SurfaceReflectionProps<T>; 4],
    pub footprint: FootprintFn<T>,
}

impl<T: Real> ChannelModel<T> {
    pub fn new(wavelength: T, props: SurfaceReflectionProps<T>) -> Self {
        Self {
            wavelength,
            surfaces: [props; 4],
            footprint: beam_footprint::<T>,
        }
    }

    fn props(&self, id: u8) -> &SurfaceReflectionProps<T> {
        &self.surfaces[usize::from(id.clamp(1, 4) - 1)]
    }
}

/// `2π·D/λ` reduced to `[0, 2π)` before it meets a trig function.
fn propagation_phase<T: Real>(distance: T, wavelength: T) -> T {
    let cycles = distance / wavelength;
    T::TAU() * (cycles - cycles.floor())
}

/// Direct-path gain `e^{j2πD/λ} · √min(A/(W·D), 1)`.
///
/// `aod` and `aoa` are array-local angles at the AP and UE respectively.
pub fn los_gain<T: Real>(
    ap_pos: Point2D<T>,
    ue_pos: Point2D<T>,
    aod: T,
    aoa: T,
    model: &ChannelModel<T>,
    n_tx: usize,
    n_ue: usize,
) -> Result<Complex<T>> {
    let d = ap_pos.distance(ue_pos);
    if !(d > T::zero()) {
        return Err(SimError::domain("LoS gain with zero AP-UE distance"));
    }
    let aperture = effective_aperture(aoa, n_ue, model.wavelength);
    let w = (model.footprint)(aod, n_tx);
    let mag = (aperture / (w * d)).min(T::one()).sqrt();
    Ok(Complex::from_polar(mag, propagation_phase(d, model.wavelength)))
}

/// Single-bounce gain off surface `s` at `refl_point`:
/// `e^{-j(Φ − 2π(D₁+D₂)/λ)} · √(η(min(A/(W(D₁+D₂)),1)·R_s + sin²ψ·A/√(4D₂²+A²)·R_d))`,
/// where ψ is the angle between the incident ray and the surface.
#[allow(clippy::too_many_arguments)]
pub fn nlos_gain<T: Real>(
    ap_pos: Point2D<T>,
    ue_pos: Point2D<T>,
    refl_point: Point2D<T>,
    surface: &Surface<T>,
    props: &SurfaceReflectionProps<T>,
    aod: T,
    aoa: T,
    model: &ChannelModel<T>,
    n_tx: usize,
    n_ue: usize,
) -> Result<Complex<T>> {
    let d1 = ap_pos.distance(refl_point);
    let d2 = refl_point.distance(ue_pos);
    if !(d1 > T::zero() && d2 > T::zero()) {
        return Err(SimError::domain("NLoS gain with degenerate leg length"));
    }
    let aperture = effective_aperture(aoa, n_ue, model.wavelength);
    let w = (model.footprint)(aod, n_tx);
    let total = d1 + d2;
    let specular = (aperture / (w * total)).min(T::one()) * props.specular;
    let incident = (refl_point - ap_pos) * (T::one() / d1);
    let face = surface.direction() * (T::one() / surface.length());
    let sin_graze = incident.cross(face);
    let diffuse = sin_graze * sin_graze * aperture / (T::of(4.0) * d2 * d2 + aperture * aperture).sqrt() * props.diffuse;
    let mag = (props.efficiency * (specular + diffuse)).max(T::zero()).sqrt();
    let phase = propagation_phase(total, model.wavelength) - props.phase_shift;
    Ok(Complex::from_polar(mag, phase))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    LineOfSight,
    /// Single bounce off the target face with this id.
    Reflected(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGeometry<T> {
    /// AP → UE distance (LoS) or AP → reflection point distance.
    pub first_leg: T,
    /// Reflection point → UE distance; zero for LoS.
    pub second_leg: T,
    pub reflection_point: Option<Point2D<T>>,
}

/// One propagation path of an AP → UE link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathDescriptor<T> {
    pub kind: PathKind,
    pub exists: bool,
    /// Departure angle, local to the AP array.
    pub aod: T,
    /// Arrival angle, local to the UE array.
    pub aoa: T,
    pub gain: Complex<T>,
    pub geometry: PathGeometry<T>,
}

/// Enumerates the direct path and every valid single-bounce path.
///
/// The LoS descriptor is always first (with `exists` reflecting blockage);
/// reflected paths are listed only when they exist, so the result has
/// between one and five entries.
pub fn trace_paths<T: Real>(
    ap: &AccessPoint<T>,
    ue: &UserEquipment<T>,
    target: &TargetState<T>,
    model: &ChannelModel<T>,
) -> Result<Vec<PathDescriptor<T>>> {
    let (a, u) = (ap.position, ue.position);
    let aod = ap.local_angle(angle_of(a, u)?);
    let aoa = ue.local_angle(angle_of(u, a)?);
    let exists = los_exists(a, u, target);
    let gain = los_gain(a, u, aod, aoa, model, ap.n_tx, ue.n_ant)?;
    let mut paths = vec![PathDescriptor {
        kind: PathKind::LineOfSight,
        exists,
        aod,
        aoa,
        gain,
        geometry: PathGeometry {
            first_leg: a.distance(u),
            second_leg: T::zero(),
            reflection_point: None,
        },
    }];
    for s in target_surfaces(target) {
        let Some(p) = reflection_point(a, u, &s, target) else {
            continue;
        };
        let (Ok(dep), Ok(arr)) = (angle_of(a, p), angle_of(u, p)) else {
            continue;
        };
        let (aod, aoa) = (ap.local_angle(dep), ue.local_angle(arr));
        let gain = nlos_gain(a, u, p, &s, model.props(s.id), aod, aoa, model, ap.n_tx, ue.n_ant)?;
        paths.push(PathDescriptor {
            kind: PathKind::Reflected(s.id),
            exists: true,
            aod,
            aoa,
            gain,
            geometry: PathGeometry {
                first_leg: a.distance(p),
                second_leg: p.distance(u),
                reflection_point: Some(p),
            },
        });
    }
    Ok(paths)
}

/// `Σ_l I_l √(N_t N_u) α_l c(θ_aoa) a(θ_aod)†` as an `n_ue × n_tx` block.
pub fn build_channel<T: Real>(paths: &[PathDescriptor<T>], n_ue: usize, n_tx: usize) -> CMatrix<T> {
    let scale = T::of_usize(n_tx * n_ue).sqrt();
    let mut h = CMatrix::zeros(n_ue, n_tx);
    for path in paths.iter().filter(|p| p.exists) {
        let rx = steering(path.aoa, n_ue);
        let tx = steering(path.aod, n_tx);
        h.add_assign_scaled(&CMatrix::outer(&rx.entries, &tx.entries), path.gain * scale);
    }
    h
}

/// Stacked network channel: UEs along rows (`N_u` each), APs along columns
/// (`N_t` each).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkChannel<T> {
    pub stacked: CMatrix<T>,
    pub n_users: usize,
    pub n_ue: usize,
    pub n_aps: usize,
    pub n_tx: usize,
}

impl<T: Real> NetworkChannel<T> {
    pub fn zeros(n_users: usize, n_ue: usize, n_aps: usize, n_tx: usize) -> Self {
        Self {
            stacked: CMatrix::zeros(n_users * n_ue, n_aps * n_tx),
            n_users,
            n_ue,
            n_aps,
            n_tx,
        }
    }

    pub fn block(&self, u: usize, m: usize) -> CMatrix<T> {
        self.stacked.block(u * self.n_ue, m * self.n_tx, self.n_ue, self.n_tx)
    }

    pub fn set_block(&mut self, u: usize, m: usize, block: &CMatrix<T>) {
        assert_eq!(block.shape(), (self.n_ue, self.n_tx), "block shape mismatch");
        self.stacked.set_block(u * self.n_ue, m * self.n_tx, block);
    }

    /// All-AP channel of user `u`, `N_u × M·N_t`.
    pub fn user(&self, u: usize) -> CMatrix<T> {
        self.stacked.block(u * self.n_ue, 0, self.n_ue, self.n_aps * self.n_tx)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        (self.n_users, self.n_ue, self.n_aps, self.n_tx) == (other.n_users, other.n_ue, other.n_aps, other.n_tx)
    }
}

fn uniform_antennas<T: Real>(scene: &Scene<T>) -> Result<(usize, usize)> {
    let n_tx = scene.aps.first().map(|a| a.n_tx).ok_or_else(|| SimError::domain("scene has no APs"))?;
    let n_ue = scene.ues.first().map(|u| u.n_ant).ok_or_else(|| SimError::domain("scene has no UEs"))?;
    if scene.aps.iter().any(|a| a.n_tx != n_tx) || scene.ues.iter().any(|u| u.n_ant != n_ue) {
        return Err(SimError::domain("stacked channel needs equal antenna counts across APs and UEs"));
    }
    Ok((n_tx, n_ue))
}

/// Ray-traces every (UE, AP) pair around `target` and stacks the blocks.
pub fn network_channel<T: Real>(
    scene: &Scene<T>,
    model: &ChannelModel<T>,
    target: &TargetState<T>,
) -> Result<NetworkChannel<T>> {
    let (n_tx, n_ue) = uniform_antennas(scene)?;
    let mut net = NetworkChannel::zeros(scene.ues.len(), n_ue, scene.aps.len(), n_tx);
    for (u, ue) in scene.ues.iter().enumerate() {
        for (m, ap) in scene.aps.iter().enumerate() {
            let paths = trace_paths(ap, ue, target, model)?;
            net.set_block(u, m, &build_channel(&paths, n_ue, n_tx));
        }
    }
    Ok(net)
}

/// Ground-truth channel for the true target pose.
pub fn true_network_channel<T: Real>(
    scene: &Scene<T>,
    model: &ChannelModel<T>,
    target: &TargetState<T>,
) -> Result<NetworkChannel<T>> {
    network_channel(scene, model, target)
}

/// Sensing-assisted estimate: the tracer fed the fused centroid, the known
/// heading and the known target extent.
pub fn estimated_network_channel_sensing<T: Real>(
    scene: &Scene<T>,
    model: &ChannelModel<T>,
    estimated_centroid: Point2D<T>,
    prior: &TargetState<T>,
) -> Result<NetworkChannel<T>> {
    network_channel(scene, model, &prior.with_centroid(estimated_centroid))
}

/// Pilot configuration of the least-squares baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsPilot<T> {
    /// UE pilot transmit power in watts.
    pub power: T,
    /// Pilot length in symbols, at least 1.
    pub length: usize,
    /// Large-scale gain of the pilot link that the normalized ray-traced
    /// gains leave out (linear, ≤ 1).
    pub link_gain: T,
}

impl<T: Real> LsPilot<T> {
    /// Per-entry variance of the LS estimation error.
    pub fn error_variance(&self, noise_power: T) -> T {
        noise_power / (self.power * T::of_usize(self.length) * self.link_gain)
    }
}

/// LS estimate `h + E` with `E` i.i.d. circular Gaussian of the pilot error variance.
pub fn estimated_network_channel_ls<T: Real, R: Rng + ?Sized>(
    true_channel: &NetworkChannel<T>,
    pilot: &LsPilot<T>,
    noise_power: T,
    rng: &mut R,
) -> Result<NetworkChannel<T>> {
    if pilot.length == 0 {
        return Err(SimError::domain("LS pilot length must be at least 1"));
    }
    let var = pilot.error_variance(noise_power);
    if !(var >= T::zero()) || !var.is_finite() {
        return Err(SimError::domain("LS error variance must be finite and non-negative"));
    }
    let sd = (var * T::of(0.5)).sqrt();
    let mut est = true_channel.clone();
    let (rows, cols) = est.stacked.shape();
    for r in 0..rows {
        for c in 0..cols {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let e = Complex::new(T::of(re) * sd, T::of(im) * sd);
            est.stacked[(r, c)] = est.stacked[(r, c)] + e;
        }
    }
    Ok(est)
}

impl<T: Real> PathDescriptor<T> {
    /// Contribution magnitude, zero when the path does not exist.
    pub fn effective_gain(&self) -> T {
        if self.exists {
            self.gain.norm()
        } else {
            T::zero()
        }
    }
}
