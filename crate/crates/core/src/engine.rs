//! Frame loop and Monte Carlo orchestration.
//!
//! Each frame senses the target in slot 0, fuses the measurements, freezes
//! one channel estimate per estimator, then scores slots 1…N−1 against the
//! true channel of the moving target. Randomness is keyed by
//! `(seed, frame, AP, scatterer)`, so results do not depend on scheduling.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{
    estimated_network_channel_ls, estimated_network_channel_sensing, true_network_channel, ChannelModel, LsPilot,
    NetworkChannel, SurfaceReflectionProps,
};
use crate::comm::{channel_correlation, slot_throughput, zf_weights, BeamformerSet, CorrelationMode, SlotThroughput};
use crate::config::{Estimator, SimConfig};
use crate::error::{Result, SimError};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{dbm_to_watts, Real};
use crate::scene::{scatterer_positions, AccessPoint, Point2D, Scene, ScattererLayout, TargetState, UserEquipment};
use crate::sensing::{
    fuse, initial_track, predict_track, sense_from_ap, FusedEstimate, MeasurementBatch, NoiseModel, ScattererDraws,
    TrackState,
};

/// Everything a frame needs, converted to the working scalar type.
#[derive(Debug, Clone)]
pub struct SimContext<T> {
    pub scene: Scene<T>,
    pub model: ChannelModel<T>,
    pub noise: NoiseModel<T>,
    pub pilot: LsPilot<T>,
    /// Per-AP transmit power `p_m` (W).
    pub p_m: T,
    /// Receiver noise power σ² (W), shared by sensing and communication.
    pub noise_power: T,
    pub slot_duration: T,
    pub slots_per_frame: usize,
    pub scatterers_k: usize,
    pub layout: ScattererLayout,
    pub initial_target: TargetState<T>,
    /// Roster index of each AP; keys the per-AP random streams.
    pub ap_ids: Vec<u64>,
    /// Sorted, without duplicates.
    pub estimators: Vec<Estimator>,
    pub correlation_mode: CorrelationMode,
    pub frames: usize,
}

impl<T: Real> SimContext<T> {
    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut cfg = cfg.clone();
        cfg.resolve_array_axes();
        let p_m = T::of(cfg.tx_power_w());
        let aps = cfg
            .aps
            .iter()
            .zip(&cfg.ap_array_axis_deg)
            .map(|(p, axis)| {
                AccessPoint::new(Point2D::from_f64(p[0], p[1]), cfg.n_tx, cfg.n_rx, p_m, T::of(axis.to_radians()))
            })
            .collect::<Result<Vec<_>>>()?;
        let ues = cfg
            .ues
            .iter()
            .zip(&cfg.ue_array_axis_deg)
            .map(|(p, axis)| UserEquipment::new(Point2D::from_f64(p[0], p[1]), cfg.n_ue, T::of(axis.to_radians())))
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene { room_size: T::of(cfg.room_size_m), aps, ues, carrier_freq: T::of(cfg.carrier_hz()) };
        let props = SurfaceReflectionProps {
            phase_shift: T::of(cfg.reflection_phase_rad),
            specular: T::of(cfg.specular_reflectance),
            diffuse: T::of(cfg.diffuse_reflectance),
            efficiency: T::of(cfg.reflection_efficiency),
        };
        let model = ChannelModel::new(scene.wavelength(), props);
        let noise_power = T::of(cfg.noise_power_w());
        let noise = NoiseModel {
            a_tau: T::of(cfg.a_tau),
            a_mu: T::of(cfg.a_mu),
            a_theta: T::of(cfg.a_theta),
            mf_gain: T::of(cfg.mf_gain),
            array_gain: T::of_usize(cfg.n_tx * cfg.n_rx).sqrt(),
            noise_power,
        };
        noise.validate()?;
        let pilot = LsPilot {
            power: T::of(cfg.ue_tx_power_w()),
            length: cfg.ls_pilot_len,
            link_gain: T::of(10f64.powf(cfg.ls_pilot_gain_db / 10.0)),
        };
        let h = cfg.target_heading;
        let norm = h[0].hypot(h[1]);
        let initial_target = TargetState::new(
            cfg.target_start(),
            Point2D::from_f64(h[0] / norm, h[1] / norm),
            T::of(cfg.target_speed_mps),
            T::of(cfg.target_length_m),
            T::of(cfg.target_width_m),
        )?;
        let mut estimators = cfg.estimators.clone();
        estimators.sort();
        estimators.dedup();
        Ok(Self {
            scene,
            model,
            noise,
            pilot,
            p_m,
            noise_power,
            slot_duration: T::of(cfg.slot_ms * 1e-3),
            slots_per_frame: cfg.slots_per_frame(),
            scatterers_k: cfg.scatterers_k,
            layout: cfg.scatterer_layout,
            initial_target,
            ap_ids: (0..cfg.aps.len() as u64).collect(),
            estimators,
            correlation_mode: cfg.correlation_mode,
            frames: cfg.frames,
        })
    }

    pub fn frame_duration(&self) -> T {
        self.slot_duration * T::of_usize(self.slots_per_frame)
    }
}

/// Moves the centroid by `speed · dt` along the heading.
pub fn advance_target<T: Real>(t: &TargetState<T>, dt: T) -> Result<TargetState<T>> {
    if !(dt >= T::zero()) {
        return Err(SimError::domain("time step must be non-negative"));
    }
    Ok(t.with_centroid(t.centroid + t.heading * (t.speed * dt)))
}

/// One estimator's result in one communication slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub estimator: Estimator,
    /// Sum throughput over users (bit/s/Hz).
    pub throughput: f64,
    pub per_user: Vec<f64>,
    pub correlation: Option<f64>,
    /// ZF needed diagonal loading for this estimate.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    /// True centroid at the sensing slot.
    pub true_centroid: [f64; 2],
    /// Estimate `(x, y, v)` used for this frame.
    pub estimate: [f64; 3],
    /// Fusion failed and the previous frame's estimate was reused.
    pub fusion_failed: bool,
    pub pos_error_m: f64,
    pub measurements: usize,
    /// Ordered by `(slot, estimator)`.
    pub slots: Vec<SlotRecord>,
}

/// Intermediate quantities of one frame, for inspection and cross-checks.
#[derive(Debug, Clone)]
pub struct FrameTrace<T> {
    pub scatterers: Vec<Point2D<T>>,
    pub batch: MeasurementBatch<T>,
    /// `None` when fusion failed.
    pub fused: Option<FusedEstimate<T>>,
    pub used_estimate: FusedEstimate<T>,
    /// True channel at the sensing slot.
    pub true_channel_slot0: NetworkChannel<T>,
    /// Frame-frozen estimates (sensing, LS), sorted by estimator.
    pub estimates: Vec<(Estimator, NetworkChannel<T>)>,
    pub beamformers: Vec<(Estimator, BeamformerSet<T>)>,
    /// True channel of slots 1…N−1.
    pub true_channels: Vec<NetworkChannel<T>>,
    /// Per-slot throughput, ordered like `FrameMetrics::slots`.
    pub throughputs: Vec<(usize, Estimator, SlotThroughput<T>)>,
}

#[derive(Debug, Clone)]
pub struct FrameOutcome<T> {
    pub metrics: FrameMetrics,
    pub next_track: TrackState<T>,
    /// True target at the start of the next frame.
    pub next_target: TargetState<T>,
    pub trace: Option<FrameTrace<T>>,
}

fn point_f64<T: Real>(p: Point2D<T>) -> [f64; 2] {
    [p.x.to_f64_lossy(), p.y.to_f64_lossy()]
}

/// Fuses a batch; `None` signals an estimation failure the frame can survive.
pub fn fuse_or_fallback<T: Real>(
    batch: &MeasurementBatch<T>,
    heading_angle: T,
    carrier_freq: T,
) -> Result<Option<FusedEstimate<T>>> {
    match fuse(batch, heading_angle, carrier_freq) {
        Ok(f) => Ok(Some(f)),
        Err(SimError::EstimationFailure(why)) => {
            log::debug!("fusion failed: {why}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs one frame from the true target pose at its sensing slot.
pub fn run_frame<T: Real>(
    ctx: &SimContext<T>,
    seed: u64,
    frame: usize,
    target: &TargetState<T>,
    track: &TrackState<T>,
    keep_trace: bool,
) -> Result<FrameOutcome<T>> {
    let fkey = frame as u64;
    let scatterers =
        scatterer_positions(target, ctx.scatterers_k, ctx.layout, &mut stream_rng(seed, Stream::Scatterers, &[fkey]));

    let scene = &ctx.scene;
    let mut batch = MeasurementBatch {
        ap_positions: scene.aps.iter().map(|a| a.position).collect(),
        measurements: Vec::new(),
    };
    for (m, ap) in scene.aps.iter().enumerate() {
        let draws: Vec<ScattererDraws<T>> = (0..ctx.scatterers_k as u64)
            .map(|k| ScattererDraws::draw(&mut stream_rng(seed, Stream::Measurement, &[fkey, ctx.ap_ids[m], k])))
            .collect();
        let predicted = *track
            .predicted_angle_per_ap
            .get(m)
            .ok_or_else(|| SimError::domain("track has no beam direction for an AP"))?;
        let ms = sense_from_ap(m, ap, &scatterers, target, scene.carrier_freq, predicted, &ctx.noise, &draws)?;
        batch.measurements.extend(ms);
    }

    let fused = fuse_or_fallback(&batch, target.heading_angle(), scene.carrier_freq)?;
    let (used, failed) = match fused {
        Some(f) => (f, false),
        None => {
            log::warn!("seed {seed} frame {frame}: fusion failed; reusing previous estimate");
            (track.last_estimate, true)
        }
    };
    let pos_error = used.centroid().distance(target.centroid);
    let next_track = predict_track(&used, target.heading, ctx.frame_duration(), &scene.aps)?;

    let h0 = true_network_channel(scene, &ctx.model, target)?;
    let mut estimates = Vec::new();
    for &e in &ctx.estimators {
        let est = match e {
            Estimator::Sensing => estimated_network_channel_sensing(scene, &ctx.model, used.centroid(), target)?,
            Estimator::Ls => {
                let mut rng = stream_rng(seed, Stream::LsError, &[fkey]);
                estimated_network_channel_ls(&h0, &ctx.pilot, ctx.noise_power, &mut rng)?
            }
            Estimator::Perfect => continue,
        };
        estimates.push((e, est));
    }
    let beamformers = estimates
        .iter()
        .map(|(e, h)| Ok((*e, zf_weights(h)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut slots = Vec::new();
    let mut true_channels = Vec::new();
    let mut throughputs = Vec::new();
    for n in 1..ctx.slots_per_frame {
        let t_n = advance_target(target, ctx.slot_duration * T::of_usize(n))?;
        let h = true_network_channel(scene, &ctx.model, &t_n)?;
        for &e in &ctx.estimators {
            let (thr, corr, regularized) = if e == Estimator::Perfect {
                let bf = zf_weights(&h)?;
                let thr = slot_throughput(&h, &bf, ctx.p_m, ctx.noise_power)?;
                let corr = channel_correlation(&h, &h, ctx.correlation_mode)?;
                (thr, corr, bf.regularized)
            } else {
                let i = ctx.estimators.iter().filter(|x| **x != Estimator::Perfect).position(|x| *x == e).unwrap();
                let (_, est) = &estimates[i];
                let (_, bf) = &beamformers[i];
                let thr = slot_throughput(&h, bf, ctx.p_m, ctx.noise_power)?;
                let corr = channel_correlation(&h, est, ctx.correlation_mode)?;
                (thr, corr, bf.regularized)
            };
            slots.push(SlotRecord {
                slot: n,
                estimator: e,
                throughput: thr.total.to_f64_lossy(),
                per_user: thr.per_user.iter().map(|v| v.to_f64_lossy()).collect(),
                correlation: corr.map(|c| c.to_f64_lossy()),
                regularized,
            });
            if keep_trace {
                throughputs.push((n, e, thr));
            }
        }
        if keep_trace {
            true_channels.push(h);
        }
    }

    let next_target = advance_target(target, ctx.frame_duration())?;
    let metrics = FrameMetrics {
        frame,
        true_centroid: point_f64(target.centroid),
        estimate: [used.x_hat.to_f64_lossy(), used.y_hat.to_f64_lossy(), used.v_hat.to_f64_lossy()],
        fusion_failed: failed,
        pos_error_m: pos_error.to_f64_lossy(),
        measurements: batch.measurements.len(),
        slots,
    };
    let trace = keep_trace.then(|| FrameTrace {
        scatterers,
        batch,
        fused,
        used_estimate: used,
        true_channel_slot0: h0,
        estimates,
        beamformers,
        true_channels,
        throughputs,
    });
    Ok(FrameOutcome { metrics, next_track, next_target, trace })
}

/// Metric series of one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub frames: Vec<FrameMetrics>,
}

/// Runs one seed until the frame budget or until the target leaves the room.
pub fn run_seed<T: Real>(ctx: &SimContext<T>, seed: u64) -> Result<SeedRun> {
    let mut target = ctx.initial_target;
    let mut track = initial_track(&target, &ctx.scene.aps)?;
    let mut frames = Vec::with_capacity(ctx.frames);
    for f in 0..ctx.frames {
        if !ctx.scene.room_contains(target.centroid) {
            log::info!("seed {seed}: target left the room after {f} frames");
            break;
        }
        let out = run_frame(ctx, seed, f, &target, &track, false)?;
        frames.push(out.metrics);
        target = out.next_target;
        track = out.next_track;
    }
    Ok(SeedRun { seed, frames })
}

/// Mean and half-width of the normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Aggregate {
    /// From independent samples; a single sample has zero half-width.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, ci95: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, ci95, n }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub throughput: Aggregate,
    pub correlation: Aggregate,
    /// Per-seed means, in seed order.
    pub seed_throughput: Vec<f64>,
    pub seed_correlation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub pos_error: Aggregate,
    pub estimators: Vec<EstimatorSummary>,
    pub frames_run: usize,
    pub fusion_failures: usize,
}

impl Summary {
    pub fn estimator(&self, e: Estimator) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == e)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-seed means (slots averaged within a frame first), then across seeds.
pub fn summarize(runs: &[SeedRun], estimators: &[Estimator]) -> Summary {
    let pos: Vec<f64> = runs
        .iter()
        .filter_map(|r| mean(r.frames.iter().map(|f| f.pos_error_m)))
        .collect();
    let per_estimator = estimators
        .iter()
        .map(|&e| {
            let mut thr = Vec::new();
            let mut corr = Vec::new();
            for r in runs {
                let frame_thr = r.frames.iter().filter_map(|f| {
                    mean(f.slots.iter().filter(|s| s.estimator == e).map(|s| s.throughput))
                });
                let frame_corr = r.frames.iter().filter_map(|f| {
                    mean(f.slots.iter().filter(|s| s.estimator == e).filter_map(|s| s.correlation))
                });
                thr.extend(mean(frame_thr));
                corr.extend(mean(frame_corr));
            }
            EstimatorSummary {
                estimator: e,
                throughput: Aggregate::from_samples(&thr),
                correlation: Aggregate::from_samples(&corr),
                seed_throughput: thr,
                seed_correlation: corr,
            }
        })
        .collect();
    Summary {
        pos_error: Aggregate::from_samples(&pos),
        estimators: per_estimator,
        frames_run: runs.iter().map(|r| r.frames.len()).sum(),
        fusion_failures: runs.iter().flat_map(|r| &r.frames).filter(|f| f.fusion_failed).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    /// Sorted by seed.
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| SimError::domain(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every seed of `cfg`, in parallel across seeds.
///
/// `threads` caps the worker count; `None` uses the global pool.
pub fn run_simulation<T: Real>(cfg: &SimConfig, threads: Option<usize>) -> Result<SimulationResult> {
    let ctx = SimContext::<T>::from_config(cfg)?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let runs = with_pool(threads, || seeds.par_iter().map(|&s| run_seed(&ctx, s)).collect::<Result<Vec<_>>>())??;
    let summary = summarize(&runs, &ctx.estimators);
    Ok(SimulationResult { runs, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// First `k` APs of the roster.
    ApCount,
    /// Per-AP transmit power in dBm.
    TxPower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Reason the point was not run.
    pub skipped: Option<String>,
    pub summary: Option<Summary>,
}

/// Config for one sweep value, or the reason it is infeasible.
pub fn sweep_config(cfg: &SimConfig, param: SweepParam, value: f64) -> Result<std::result::Result<SimConfig, String>> {
    match param {
        SweepParam::ApCount => {
            if !(value >= 1.0 && value.fract() == 0.0 && value as usize <= cfg.n_aps()) {
                return Err(SimError::Config {
                    key: "aps".into(),
                    line: None,
                    message: format!("AP count {value} must be an integer in 1..={}", cfg.n_aps()),
                });
            }
            let c = cfg.with_ap_count(value as usize);
            if c.zf_feasible() {
                Ok(Ok(c))
            } else {
                Ok(Err(format!(
                    "ZF infeasible with {} APs: U·N_u = {} > M·N_t = {}",
                    c.n_aps(),
                    c.n_users() * c.n_ue,
                    c.n_aps() * c.n_tx
                )))
            }
        }
        SweepParam::TxPower => {
            if !value.is_finite() || !(dbm_to_watts(value) > 0.0) {
                return Err(SimError::Config {
                    key: "tx_power_dbm".into(),
                    line: None,
                    message: format!("invalid power {value}"),
                });
            }
            let mut c = cfg.clone();
            c.tx_power_dbm = value;
            Ok(Ok(c))
        }
    }
}

/// Runs the full seed set at each value; infeasible values are skipped with a warning.
pub fn run_sweep<T: Real>(
    cfg: &SimConfig,
    param: SweepParam,
    values: &[f64],
    threads: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(SimError::Config { key: "values".into(), line: None, message: "no sweep values".into() });
    }
    values
        .iter()
        .map(|&v| match sweep_config(cfg, param, v)? {
            Ok(c) => {
                let r = run_simulation::<T>(&c, threads)?;
                Ok(SweepPoint { value: v, skipped: None, summary: Some(r.summary) })
            }
            Err(why) => {
                log::warn!("sweep value {v} skipped: {why}");
                Ok(SweepPoint { value: v, skipped: Some(why), summary: None })
            }
        })
        .collect()
}
