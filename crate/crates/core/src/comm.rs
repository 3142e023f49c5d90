//! Downlink zero-forcing, per-user log-det throughput and the channel
//! correlation metric.

use num_complex::Complex;

use crate::channel::NetworkChannel;
use crate::error::{Result, SimError};
use crate::linalg::{log2_det_hpd, CMatrix};
use crate::scalar::Real;

/// Relative diagonal loading applied when `ĤĤ†` is not positive definite.
pub const ZF_LOADING: f64 = 1e-9;

/// ZF precoder `W = Ĥ†(ĤĤ†)⁻¹`, `M·N_t × U·N_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet<T> {
    pub full: CMatrix<T>,
    pub n_users: usize,
    pub n_ue: usize,
    /// Squared Frobenius norm of each user's column block `w_u`.
    pub user_norms_sqr: Vec<T>,
    /// True when diagonal loading was needed to invert `ĤĤ†`.
    pub regularized: bool,
}

impl<T: Real> BeamformerSet<T> {
    /// Column block `w_u`, `M·N_t × N_u`.
    pub fn user(&self, u: usize) -> CMatrix<T> {
        self.full.block(0, u * self.n_ue, self.full.rows(), self.n_ue)
    }
}

/// Zero-forcing weights for the stacked estimate.
///
/// Falls back to diagonal loading `1e-9 · tr(ĤĤ†)/(U·N_u)` when the Gram
/// matrix is numerically singular; the result is flagged as regularized.
pub fn zf_weights<T: Real>(h_est: &NetworkChannel<T>) -> Result<BeamformerSet<T>> {
    let h = &h_est.stacked;
    let (rows, cols) = h.shape();
    if rows > cols {
        log::warn!("ZF with more receive streams ({rows}) than transmit antennas ({cols}); using loading");
    }
    let gram = h.matmul_adjoint(h).hermitian_part();
    let (chol, regularized) = match gram.cholesky() {
        Ok(c) => (c, false),
        Err(_) => {
            let load = T::of(ZF_LOADING) * gram.trace().re / T::of_usize(rows.max(1));
            let load = if load > T::zero() { load } else { T::of(ZF_LOADING) };
            let mut loaded = gram.clone();
            for i in 0..rows {
                loaded[(i, i)] = loaded[(i, i)] + Complex::new(load, T::zero());
            }
            (loaded.cholesky()?, true)
        }
    };
    // (ĤĤ†)⁻¹Ĥ, then adjoint gives Ĥ†(ĤĤ†)⁻¹ since the Gram matrix is Hermitian.
    let full = chol.solve(h).adjoint();
    if !full.is_finite() {
        return Err(SimError::Numeric {
            what: "non-finite ZF weights".into(),
            condition: chol.condition_estimate().to_f64_lossy(),
        });
    }
    let n_ue = h_est.n_ue;
    let user_norms_sqr = (0..h_est.n_users)
        .map(|u| full.block(0, u * n_ue, cols, n_ue).frobenius_norm_sqr())
        .collect();
    Ok(BeamformerSet { full, n_users: h_est.n_users, n_ue, user_norms_sqr, regularized })
}

/// `R_S = p · (h w)(h w)† / ‖w‖²_F`.
pub fn signal_covariance<T: Real>(h_true_u: &CMatrix<T>, w_u: &CMatrix<T>, power: T) -> Result<CMatrix<T>> {
    let norm_sqr = w_u.frobenius_norm_sqr();
    if !(norm_sqr > T::zero()) {
        return Err(SimError::domain("zero-norm beamformer"));
    }
    let hw = h_true_u.matmul(w_u);
    Ok(hw.matmul_adjoint(&hw).scale_real(power / norm_sqr).hermitian_part())
}

/// `R_I = Σ_{u'≠u} p_{u'} (h w_{u'})(h w_{u'})† / ‖w_{u'}‖²_F + σ² I`.
///
/// `others` yields the beamformer and power of every other user.
pub fn interference_covariance<'a, T: Real>(
    h_true_u: &CMatrix<T>,
    others: impl IntoIterator<Item = (&'a CMatrix<T>, T)>,
    noise_power: T,
) -> Result<CMatrix<T>> {
    let n = h_true_u.rows();
    let mut r = CMatrix::identity(n).scale_real(noise_power);
    for (w, p) in others {
        let cov = signal_covariance(h_true_u, w, p)?;
        r.add_assign_scaled(&cov, Complex::new(T::one(), T::zero()));
    }
    Ok(r)
}

/// `log2 det(R_S + R_I) − log2 det(R_I)`, in bits/s/Hz.
pub fn user_throughput<T: Real>(r_s: &CMatrix<T>, r_i: &CMatrix<T>) -> Result<T> {
    let total = (r_s + r_i).hermitian_part();
    let v = log2_det_hpd(&total)? - log2_det_hpd(r_i)?;
    if !v.is_finite() {
        return Err(SimError::Numeric {
            what: "non-finite throughput".into(),
            condition: f64::INFINITY,
        });
    }
    // PSD addition never lowers the determinant; clip round-off.
    Ok(v.max(T::zero()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotThroughput<T> {
    pub per_user: Vec<T>,
    pub total: T,
}

/// Per-user and total throughput of one slot: true channel, fixed precoder,
/// every user transmitted with power `M · p_m`.
pub fn slot_throughput<T: Real>(
    h_true: &NetworkChannel<T>,
    bf: &BeamformerSet<T>,
    p_m: T,
    noise_power: T,
) -> Result<SlotThroughput<T>> {
    if h_true.stacked.cols() != bf.full.rows() || h_true.n_users != bf.n_users || h_true.n_ue != bf.n_ue {
        return Err(SimError::domain("channel and beamformer dimensions disagree"));
    }
    let p_u = T::of_usize(h_true.n_aps) * p_m;
    let n_ue = h_true.n_ue;
    // G = H W, block (u, u') = h_u w_{u'}
    let g = h_true.stacked.matmul(&bf.full);
    let mut per_user = Vec::with_capacity(h_true.n_users);
    for u in 0..h_true.n_users {
        let mut r_s = None;
        let mut r_i = CMatrix::identity(n_ue).scale_real(noise_power);
        for v in 0..h_true.n_users {
            let norm_sqr = bf.user_norms_sqr[v];
            if !(norm_sqr > T::zero()) {
                return Err(SimError::domain("zero-norm beamformer"));
            }
            let hw = g.block(u * n_ue, v * n_ue, n_ue, n_ue);
            let cov = hw.matmul_adjoint(&hw).scale_real(p_u / norm_sqr).hermitian_part();
            if u == v {
                r_s = Some(cov);
            } else {
                r_i.add_assign_scaled(&cov, Complex::new(T::one(), T::zero()));
            }
        }
        let r_s = r_s.expect("own block visited");
        per_user.push(user_throughput(&r_s, &r_i)?);
    }
    let total = per_user.iter().copied().sum();
    Ok(SlotThroughput { per_user, total })
}

/// How the complex normalized trace is reduced to a real score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// `|tr(h ĥ†)|`, in [0, 1].
    #[default]
    Magnitude,
    /// `Re tr(h ĥ†)`, in [−1, 1]; sensitive to a common phase offset.
    RealPart,
}

/// `(1/U) Σ_u |tr(h_u ĥ_u†)| / (‖h_u‖_F ‖ĥ_u‖_F)`.
///
/// Users with a zero-norm block are skipped (with a warning) and the
/// average is over the remaining users; `None` if all were skipped.
pub fn channel_correlation<T: Real>(
    h_true: &NetworkChannel<T>,
    h_est: &NetworkChannel<T>,
    mode: CorrelationMode,
) -> Result<Option<T>> {
    if !h_true.same_layout(h_est) {
        return Err(SimError::domain("channel shapes differ"));
    }
    let mut acc = T::zero();
    let mut counted = 0usize;
    for u in 0..h_true.n_users {
        let h = h_true.user(u);
        let e = h_est.user(u);
        let denom = h.frobenius_norm() * e.frobenius_norm();
        if !(denom > T::zero()) {
            log::warn!("user {u}: zero-norm channel block, skipped in correlation");
            continue;
        }
        let tr = h.inner(&e);
        let num = match mode {
            CorrelationMode::Magnitude => tr.norm(),
            CorrelationMode::RealPart => tr.re,
        };
        acc = acc + num / denom;
        counted += 1;
    }
    Ok((counted > 0).then(|| acc / T::of_usize(counted)))
}
