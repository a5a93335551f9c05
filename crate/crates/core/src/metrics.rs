//! Joint and camera trajectory errors under the usual alignment protocols.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{exp_so3, log_so3, CameraTrajectory};
use crate::motion::{BodyModel, MotionWindow};

pub const DEFAULT_CHUNK: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignKind {
    FirstFrame,
    FirstTwoFrames,
    FullProcrustes,
    RigidOnly,
    Similarity,
}

/// `p ↦ s R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub kind: AlignKind,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn identity(kind: AlignKind) -> Self {
        Self { kind, rotation: Matrix3::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares `argmin ‖s R a + t − b‖²` (Umeyama), with `det R = +1`.
/// Without `allow_scale` the scale stays 1.
pub fn procrustes(a: &[Vector3<f64>], b: &[Vector3<f64>], allow_scale: bool) -> Result<Alignment> {
    if a.len() != b.len() {
        return Err(CoinError::Shape { expected: a.len(), got: b.len() });
    }
    if a.len() < 3 {
        return Err(CoinError::Geometry("alignment needs at least three points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<Vector3<f64>>() / n;
    let mb = b.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_a = 0.0;
    for (p, q) in a.iter().zip(b) {
        let pa = p - ma;
        let qb = q - mb;
        cov += qb * pa.transpose();
        scatter += pa * pa.transpose();
        var_a += pa.norm_squared();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|x, y| y.total_cmp(x));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(CoinError::Geometry("points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v)) => (u, v),
        _ => return Err(CoinError::Geometry("SVD failed".into())),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if allow_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
        trace / var_a
    } else {
        1.0
    };
    let translation = mb - rotation * ma * scale;
    let kind = if allow_scale { AlignKind::Similarity } else { AlignKind::RigidOnly };
    Ok(Alignment { kind, rotation, translation, scale })
}

fn check_pair(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(CoinError::Shape { expected: gt.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(CoinError::Domain("empty sequence".into()));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(CoinError::Shape { expected: g.len(), got: p.len() });
        }
    }
    Ok(())
}

fn mean_error(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>], align: &Alignment) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.iter().zip(g) {
            sum += (align.apply(a) - b).norm();
            n += 1;
        }
    }
    sum / n as f64
}

fn chunks(frames: usize, chunk: usize) -> Result<Vec<(usize, usize)>> {
    if chunk < 2 {
        return Err(CoinError::Domain("chunks need at least two frames".into()));
    }
    let out: Vec<(usize, usize)> = (0..frames).step_by(chunk).map(|s| (s, (s + chunk).min(frames))).collect();
    if out.iter().any(|(s, e)| e - s < 2) {
        return Err(CoinError::Domain("a chunk is shorter than two frames".into()));
    }
    Ok(out)
}

fn flat(frames: &[Vec<Vector3<f64>>]) -> Vec<Vector3<f64>> {
    frames.iter().flatten().copied().collect()
}

/// Per chunk: rigid alignment on the first two frames' joints, then MPJPE; averaged over chunks.
pub fn w_mpjpe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>], chunk: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    let cs = chunks(pred.len(), chunk)?;
    let mut total = 0.0;
    for &(s, e) in &cs {
        let align = procrustes(&flat(&pred[s..s + 2]), &flat(&gt[s..s + 2]), false)?;
        total += mean_error(&pred[s..e], &gt[s..e], &Alignment { kind: AlignKind::FirstTwoFrames, ..align });
    }
    Ok(total / cs.len() as f64)
}

/// Per chunk: rigid alignment on all of the chunk's joints, then MPJPE.
pub fn wa_mpjpe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>], chunk: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    let cs = chunks(pred.len(), chunk)?;
    let mut total = 0.0;
    for &(s, e) in &cs {
        let align = procrustes(&flat(&pred[s..e]), &flat(&gt[s..e]), false)?;
        total += mean_error(&pred[s..e], &gt[s..e], &Alignment { kind: AlignKind::FullProcrustes, ..align });
    }
    Ok(total / cs.len() as f64)
}

/// Rigid alignment on the first frame's joints over the whole sequence.
pub fn w_mpjpe_first_frame(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>]) -> Result<f64> {
    check_pair(pred, gt)?;
    let align = procrustes(&pred[0], &gt[0], false)?;
    Ok(mean_error(pred, gt, &Alignment { kind: AlignKind::FirstFrame, ..align }))
}

/// Per-frame similarity alignment, then MPJPE.
pub fn pa_mpjpe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>]) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let align = procrustes(p, g, true)?;
        total += mean_error(std::slice::from_ref(p), std::slice::from_ref(g), &align);
    }
    Ok(total / pred.len() as f64)
}

/// Mean `‖Δ²pred − Δ²gt‖ / dt²` over interior frames and joints.
pub fn accel_error(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>], dt: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.len() < 3 {
        return Err(CoinError::Domain("acceleration needs three frames".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 1..pred.len() - 1 {
        for j in 0..pred[i].len() {
            let ap = pred[i - 1][j] - pred[i][j] * 2.0 + pred[i + 1][j];
            let ag = gt[i - 1][j] - gt[i][j] * 2.0 + gt[i + 1][j];
            sum += (ap - ag).norm();
            n += 1;
        }
    }
    Ok(sum / n as f64 / (dt * dt))
}

/// RMS translation error after similarity (`with_scale`) or rigid alignment.
pub fn ate(pred: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> Result<f64> {
    let align = procrustes(pred, gt, with_scale)?;
    let sq: f64 = pred.iter().zip(gt).map(|(p, g)| (align.apply(p) - g).norm_squared()).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Root poses `(R, t)` aligned at the first frame: mean translation error and
/// mean geodesic orientation error in degrees.
pub fn rte_roe(pred: &[(Matrix3<f64>, Vector3<f64>)], gt: &[(Matrix3<f64>, Vector3<f64>)]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(CoinError::Shape { expected: gt.len(), got: pred.len() });
    }
    // T_gt0 T_pred0⁻¹ maps the first predicted pose onto the first true one
    let r = gt[0].0 * pred[0].0.transpose();
    let t = gt[0].1 - r * pred[0].1;
    let mut rte = 0.0;
    let mut roe = 0.0;
    for ((rp, tp), (rg, tg)) in pred.iter().zip(gt) {
        rte += (r * tp + t - tg).norm();
        roe += log_so3(&((r * rp).transpose() * rg)).norm().to_degrees();
    }
    let n = pred.len() as f64;
    Ok((rte / n, roe / n))
}

pub fn root_poses(h: &MotionWindow) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    (0..h.frames()).map(|i| (exp_so3(&h.orientation(i)), h.translation(i))).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub w_mpjpe: f64,
    pub wa_mpjpe: f64,
    pub pa_mpjpe: f64,
    pub w_rje: f64,
    pub accel: f64,
    pub rte: f64,
    pub roe: f64,
    pub ate: f64,
    pub ate_s: f64,
    pub cam_accel: f64,
    pub scale: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 11] = ["w_mpjpe", "wa_mpjpe", "pa_mpjpe", "w_rje", "accel", "rte", "roe", "ate", "ate_s", "cam_accel", "scale"];

    pub fn values(&self) -> [f64; 11] {
        [self.w_mpjpe, self.wa_mpjpe, self.pa_mpjpe, self.w_rje, self.accel, self.rte, self.roe, self.ate, self.ate_s, self.cam_accel, self.scale]
    }
}

/// Every metric for an estimate against ground truth. `scale` is copied through.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_motion(
    body: &BodyModel,
    pred: &MotionWindow,
    pred_beta: &[f64; 2],
    gt: &MotionWindow,
    gt_beta: &[f64; 2],
    pred_cam: &CameraTrajectory,
    gt_cam: &CameraTrajectory,
    dt: f64,
    scale: f64,
) -> Result<MetricsReport> {
    if pred.frames() != gt.frames() || pred_cam.len() != gt_cam.len() || pred.frames() != pred_cam.len() {
        return Err(CoinError::Shape { expected: gt.frames(), got: pred.frames().min(pred_cam.len()) });
    }
    let pj = body.joints(pred, pred_beta);
    let gj = body.joints(gt, gt_beta);
    let chunk = DEFAULT_CHUNK.min(pred.frames());
    let roots = |j: &[Vec<Vector3<f64>>]| j.iter().map(|f| vec![f[0], f[1], f[2]]).collect::<Vec<_>>();
    let (rte, roe) = rte_roe(&root_poses(pred), &root_poses(gt))?;
    let pc = pred_cam.centers();
    let gc = gt_cam.centers();
    let as_frames = |c: &[Vector3<f64>]| c.iter().map(|p| vec![*p]).collect::<Vec<_>>();
    Ok(MetricsReport {
        w_mpjpe: w_mpjpe(&pj, &gj, chunk)?,
        wa_mpjpe: wa_mpjpe(&pj, &gj, chunk)?,
        pa_mpjpe: pa_mpjpe(&pj, &gj)?,
        // root plus both feet: the feet anchor the alignment, the root carries the error
        w_rje: w_mpjpe(&roots(&pj), &roots(&gj), chunk)?,
        accel: accel_error(&pj, &gj, dt)?,
        rte,
        roe,
        ate: ate(&pc, &gc, true)?,
        ate_s: ate(&pc, &gc, false)?,
        cam_accel: accel_error(&as_frames(&pc), &as_frames(&gc), dt)?,
        scale,
    })
}
