//! Block distributed compressive video sensing.
//!
//! Frames are grouped into GOPs whose first frame is the key frame. Key
//! frames are sensed at a high subrate and recovered with the refined
//! still-image pipeline; non-key frames are sensed at a low subrate and
//! recovered with side information selected in the measurement domain,
//! refreshed by per-block multi-hypothesis prediction under
//! distance-weighted Tikhonov regularization, and coupled into the
//! recovery as an extra quadratic regularizer.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::block::{assemble_blocks, BlockGeometry};
use crate::error::{Error, Result};
use crate::image::{dot, Image};
use crate::metrics::psnr;
use crate::patch::{estimate_noise_sigma, synthesize_sparse, threshold_for_sigma, TransformMode};
use crate::refine::{misfit_l2, solve_refined, RefineParams};
use crate::sensing::{
    apply_frame, apply_frame_adjoint, make_gaussian_operator, sense, BlockSensingOperator,
    MeasurementSet,
};
use crate::trace::{ConvergenceTrace, TraceRecord};
use crate::tv::TvSolution;

/// Multi-hypothesis prediction parameters: 16-pixel blocks, a +/-7 pixel
/// hypothesis search, and a 0.25 Tikhonov weight.
#[derive(Debug, Clone, Copy)]
pub struct MhParams {
    pub block_side: usize,
    pub search_radius: usize,
    pub tikhonov_weight: f64,
}

impl Default for MhParams {
    fn default() -> Self {
        Self {
            block_side: 16,
            search_radius: 7,
            tikhonov_weight: 0.25,
        }
    }
}

/// Full video pipeline configuration.
#[derive(Debug, Clone)]
pub struct DcvsConfig {
    pub gop_size: usize,
    pub key_subrate: f64,
    pub nonkey_subrate: f64,
    pub block_side: usize,
    /// Side-information selection threshold, scaled internally by the
    /// square root of the measurement length.
    pub tau2: f64,
    /// Penalty coupling the iterate to its sparse synthesis.
    pub mu2: f64,
    /// Penalty coupling the iterate to the side information.
    pub mu3: f64,
    pub mh: MhParams,
    /// Refresh the side information every this many iterations.
    pub si_refresh_period: usize,
    pub nonkey_max_iters: usize,
    pub nonkey_tol: f64,
    /// Key-frame recovery parameters.
    pub refine: RefineParams,
    pub seed: u64,
}

impl Default for DcvsConfig {
    fn default() -> Self {
        Self {
            gop_size: 2,
            key_subrate: 0.7,
            nonkey_subrate: 0.1,
            block_side: 16,
            tau2: 2.0,
            mu2: 0.0025,
            mu3: 0.055,
            mh: MhParams::default(),
            si_refresh_period: 1,
            nonkey_max_iters: 30,
            nonkey_tol: 1e-5,
            refine: RefineParams::default(),
            seed: 0,
        }
    }
}

/// Rounded measurement count for a subrate over n-pixel blocks.
pub fn subrate_to_rows(subrate: f64, n: usize) -> usize {
    ((subrate * n as f64).round() as usize).clamp(1, n)
}

/// Selects the initial side information in the measurement domain: if the
/// candidates within the scaled threshold agree with each other, their
/// pixelwise average is returned, otherwise the single candidate with the
/// smallest measurement distance.
pub fn select_si(
    b_nk: &MeasurementSet,
    candidates: &[Image],
    op: &BlockSensingOperator,
    geom: &BlockGeometry,
    tau2: f64,
) -> Result<Image> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let b = b_nk.concat();
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        scores.push(misfit_l2(cand, &b, op, geom)?);
    }
    let threshold = tau2 * (b.len() as f64).sqrt();
    let selected: Vec<usize> = (0..candidates.len())
        .filter(|&i| scores[i] <= threshold)
        .collect();
    let use_average = if selected.is_empty() {
        false
    } else {
        let lo = selected.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        let hi = selected
            .iter()
            .map(|&i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        hi - lo <= threshold
    };
    if use_average {
        let mut acc = Image::zeros(candidates[0].height(), candidates[0].width());
        for &i in &selected {
            acc = Image::lin_comb(1.0, &acc, 1.0, &candidates[i]);
        }
        Ok(acc.scale(1.0 / selected.len() as f64))
    } else {
        let best = (0..candidates.len())
            .min_by(|&a, &b| {
                scores[a]
                    .partial_cmp(&scores[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty");
        Ok(candidates[best].clone())
    }
}

/// Per-block multi-hypothesis prediction: every block of the predicted
/// frame is a least-squares combination of the reference-frame blocks
/// within the search radius of its position, regularized by a Tikhonov
/// term with per-hypothesis measurement distances on the diagonal.
pub fn mh_predict(
    u_ref: &Image,
    b_nk: &MeasurementSet,
    op: &BlockSensingOperator,
    geom: &BlockGeometry,
    params: &MhParams,
) -> Result<Image> {
    if u_ref.height() != geom.image_height() || u_ref.width() != geom.image_width() {
        return Err(Error::ShapeMismatch(
            "reference frame does not match the geometry".into(),
        ));
    }
    if params.block_side != geom.block_side {
        return Err(Error::Geometry(format!(
            "prediction block side {} does not match geometry block side {}",
            params.block_side, geom.block_side
        )));
    }
    if b_nk.block_count() != geom.block_count() {
        return Err(Error::ShapeMismatch(
            "measurement set does not match the geometry".into(),
        ));
    }
    let bs = geom.block_side;
    let n = geom.block_len();
    let m = op.rows();
    let radius = params.search_radius as isize;
    let (h, w) = (u_ref.height(), u_ref.width());

    let blocks: Vec<Vec<f64>> = (0..geom.block_count())
        .into_par_iter()
        .map(|k| {
            let br = k / geom.grid_cols;
            let bc = k % geom.grid_cols;
            let r0 = (br * bs) as isize;
            let c0 = (bc * bs) as isize;
            let r_lo = (r0 - radius).max(0) as usize;
            let r_hi = ((r0 + radius) as usize).min(h - bs);
            let c_lo = (c0 - radius).max(0) as usize;
            let c_hi = ((c0 + radius) as usize).min(w - bs);

            let mut hyps: Vec<Vec<f64>> = Vec::new();
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    let mut v = vec![0.0; n];
                    let mut idx = 0;
                    for dr in 0..bs {
                        for dc in 0..bs {
                            v[idx] = u_ref.get(r + dr, c + dc);
                            idx += 1;
                        }
                    }
                    hyps.push(v);
                }
            }
            let count = hyps.len();
            let b_k = &b_nk.per_block()[k];

            // Measurement-domain images of every hypothesis and their
            // distances to the block measurement.
            let mut sensed = DMatrix::zeros(m, count);
            let mut gamma = vec![0.0; count];
            for (j, hyp) in hyps.iter().enumerate() {
                let y = op.apply_block(hyp);
                let mut dist = 0.0;
                for (&yy, &bb) in y.iter().zip(b_k) {
                    let r = bb - yy;
                    dist += r * r;
                }
                gamma[j] = dist.sqrt();
                for i in 0..m {
                    sensed[(i, j)] = y[i];
                }
            }

            let rhs = sensed.transpose() * DVector::from_column_slice(b_k);
            let mut normal = sensed.transpose() * &sensed;
            let lw2 = params.tikhonov_weight * params.tikhonov_weight;
            for j in 0..count {
                normal[(j, j)] += lw2 * gamma[j] * gamma[j];
            }
            // Tiny jitter keeps the factorization alive when the normal
            // matrix is rank deficient (m < count is the usual case).
            let jitter = 1e-12 * (normal.trace() / count as f64 + 1.0);
            for j in 0..count {
                normal[(j, j)] += jitter;
            }

            let weights = match normal.cholesky() {
                Some(chol) => chol.solve(&rhs),
                None => {
                    // Nearest single hypothesis.
                    let best = (0..count)
                        .min_by(|&a, &b| {
                            gamma[a]
                                .partial_cmp(&gamma[b])
                                .unwrap_or(std::cmp::Ordering::Equal)
                        })
                        .expect("at least the co-located hypothesis exists");
                    let mut e = DVector::zeros(count);
                    e[best] = 1.0;
                    e
                }
            };

            let mut block = vec![0.0; n];
            for (j, hyp) in hyps.iter().enumerate() {
                let wj = weights[j];
                if wj != 0.0 {
                    for (bv, &hv) in block.iter_mut().zip(hyp) {
                        *bv += wj * hv;
                    }
                }
            }
            block
        })
        .collect();

    assemble_blocks(&blocks, geom)
}

/// Descent direction for the non-key sub-problem:
/// mu2 (u - synth - lambda2) + mu3 (u - si - lambda3) - A^T (b - A u).
#[allow(clippy::too_many_arguments)]
pub fn nonkey_direction(
    u: &Image,
    synthesized: &Image,
    side_info: &Image,
    lambda2: &Image,
    lambda3: &Image,
    b: &[f64],
    mu2: f64,
    mu3: f64,
    op: &BlockSensingOperator,
    geom: &BlockGeometry,
) -> Result<Image> {
    let au = apply_frame(op, geom, u)?;
    if au.len() != b.len() {
        return Err(Error::ShapeMismatch(
            "measurement vector does not match the frame operator".into(),
        ));
    }
    let resid: Vec<f64> = b.iter().zip(&au).map(|(&bv, &a)| bv - a).collect();
    let data_part = apply_frame_adjoint(op, geom, &resid)?;
    let mut d = Image::zeros(u.height(), u.width());
    for i in 0..d.len() {
        d.as_mut_slice()[i] = mu2
            * (u.as_slice()[i] - synthesized.as_slice()[i] - lambda2.as_slice()[i])
            + mu3 * (u.as_slice()[i] - side_info.as_slice()[i] - lambda3.as_slice()[i])
            - data_part.as_slice()[i];
    }
    Ok(d)
}

/// Step size <d,d> / <d,Gd> with G = A^T A + (mu2 + mu3) I.
pub fn nonkey_step_size(
    d: &Image,
    mu2: f64,
    mu3: f64,
    op: &BlockSensingOperator,
    geom: &BlockGeometry,
) -> Result<f64> {
    let dd = dot(d.as_slice(), d.as_slice());
    if dd == 0.0 {
        return Ok(0.0);
    }
    let ad = apply_frame(op, geom, d)?;
    let quad = dot(&ad, &ad) + (mu2 + mu3) * dd;
    if quad <= 0.0 || !quad.is_finite() {
        return Ok(0.0);
    }
    Ok(dd / quad)
}

/// Recovers one non-key frame from its measurements and an initial side
/// information frame. The side information is refreshed by prediction from
/// the latest iterate; the sparse synthesis uses the combined transforms.
pub fn recover_nonkey(
    b_nk: &MeasurementSet,
    op: &BlockSensingOperator,
    geom: &BlockGeometry,
    si_init: &Image,
    cfg: &DcvsConfig,
    ground_truth: Option<&Image>,
) -> Result<TvSolution> {
    if !(cfg.mu2 > 0.0) || cfg.mu3 < 0.0 {
        return Err(Error::InvalidParameter(
            "nonkey penalties must be positive".into(),
        ));
    }
    let b = b_nk.concat();
    let mut u = si_init.clone();
    let mut si = si_init.clone();
    let mut lambda2 = Image::zeros(u.height(), u.width());
    let mut lambda3 = Image::zeros(u.height(), u.width());
    let mut trace = ConvergenceTrace::default();
    let mut best = (misfit_l2(&u, &b, op, geom)?, u.clone());
    let mut converged = false;
    let refresh = cfg.si_refresh_period.max(1);

    for t in 1..=cfg.nonkey_max_iters {
        if (t - 1) % refresh == 0 {
            si = mh_predict(&u, b_nk, op, geom, &cfg.mh)?;
        }
        let tau = cfg
            .refine
            .tau_override
            .unwrap_or_else(|| threshold_for_sigma(estimate_noise_sigma(&u)));
        let synth = synthesize_sparse(&u, TransformMode::Combined, &cfg.refine.patch, tau)?;
        let d = nonkey_direction(
            &u, &synth, &si, &lambda2, &lambda3, &b, cfg.mu2, cfg.mu3, op, geom,
        )?;
        let eta = nonkey_step_size(&d, cfg.mu2, cfg.mu3, op, geom)?;
        if eta == 0.0 {
            converged = true;
            break;
        }
        let prev_norm = u.norm_l2();
        let u_next = Image::lin_comb(1.0, &u, -eta, &d);
        if !u_next.is_finite() {
            trace.converged = false;
            return Ok(TvSolution {
                image: best.1,
                trace,
            });
        }
        lambda2 = Image::from_fn(u.height(), u.width(), |r, c| {
            lambda2.get(r, c) - (u_next.get(r, c) - synth.get(r, c))
        });
        lambda3 = Image::from_fn(u.height(), u.width(), |r, c| {
            lambda3.get(r, c) - (u_next.get(r, c) - si.get(r, c))
        });
        let rel_change = if prev_norm == 0.0 {
            0.0
        } else {
            (prev_norm - u_next.norm_l2()).abs() / prev_norm
        };
        let step_norm = if prev_norm == 0.0 {
            0.0
        } else {
            Image::lin_comb(1.0, &u_next, -1.0, &u).norm_l2() / prev_norm
        };
        u = u_next;

        let misfit = misfit_l2(&u, &b, op, geom)?;
        let mut objective = 0.5 * misfit * misfit;
        for i in 0..u.len() {
            let c2 = u.as_slice()[i] - synth.as_slice()[i] - lambda2.as_slice()[i];
            let c3 = u.as_slice()[i] - si.as_slice()[i] - lambda3.as_slice()[i];
            objective += 0.5 * cfg.mu2 * c2 * c2 + 0.5 * cfg.mu3 * c3 * c3;
        }
        let rec_psnr = ground_truth.map(|gt| psnr(gt, &u.clamped())).transpose()?;
        trace.push(TraceRecord {
            iteration: t,
            objective,
            misfit,
            rel_change,
            step_norm,
            psnr: rec_psnr,
        });
        if misfit < best.0 {
            best = (misfit, u.clone());
        }
        if rel_change <= cfg.nonkey_tol {
            converged = true;
            break;
        }
    }

    trace.converged = converged;
    Ok(TvSolution { image: u, trace })
}

/// Whether a frame index is a key frame under the GOP structure.
pub fn is_key_frame(index: usize, gop_size: usize) -> bool {
    index % gop_size.max(1) == 0
}

/// Per-frame outcome for the run report.
#[derive(Debug, Clone)]
pub struct FrameReport {
    pub index: usize,
    pub is_key: bool,
    pub subrate: f64,
    pub psnr_db: f64,
    pub iterations: usize,
    pub seconds: f64,
}

/// Result of a full video run.
#[derive(Debug, Clone)]
pub struct DcvsOutcome {
    pub recovered: Vec<Image>,
    pub report: Vec<FrameReport>,
}

/// Renders the report CSV: frame, type, subrate, psnr_db, iterations,
/// seconds.
pub fn report_to_csv(report: &[FrameReport]) -> String {
    let mut out = String::from("frame,type,subrate,psnr_db,iterations,seconds\n");
    for r in report {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.index,
            if r.is_key { "key" } else { "nonkey" },
            crate::experiment::g6(r.subrate),
            crate::experiment::g6(r.psnr_db),
            r.iterations,
            crate::experiment::g6(r.seconds),
        ));
    }
    out
}

/// Senses and recovers a whole sequence: key frames through the refined
/// still-image path at the key subrate, non-key frames through the
/// side-information-regularized path at the non-key subrate.
pub fn run_dcvs(frames: &[Image], cfg: &DcvsConfig) -> Result<DcvsOutcome> {
    if frames.is_empty() {
        return Err(Error::InvalidParameter("empty frame sequence".into()));
    }
    if cfg.gop_size < 2 {
        return Err(Error::InvalidParameter("GOP size must be at least 2".into()));
    }
    let (h, w) = (frames[0].height(), frames[0].width());
    for (i, f) in frames.iter().enumerate() {
        if f.height() != h || f.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "frame {} has shape {}x{}, expected {}x{}",
                i,
                f.height(),
                f.width(),
                h,
                w
            )));
        }
    }
    let geom = BlockGeometry::for_image(h, w, cfg.block_side)?;
    let n = geom.block_len();
    let m_key = subrate_to_rows(cfg.key_subrate, n);
    let m_nk = subrate_to_rows(cfg.nonkey_subrate, n);
    let op_key = make_gaussian_operator(m_key, n, cfg.seed)?;
    let op_nk = make_gaussian_operator(m_nk, n, cfg.seed.wrapping_add(1))?;

    let mut recovered: Vec<Image> = Vec::with_capacity(frames.len());
    let mut report = Vec::with_capacity(frames.len());

    for (i, frame) in frames.iter().enumerate() {
        let start = Instant::now();
        let key = is_key_frame(i, cfg.gop_size);
        let solution = if key {
            let ms = sense(frame, &op_key, &geom)?;
            solve_refined(
                &ms,
                &op_key,
                &geom,
                TransformMode::Combined,
                &cfg.refine,
                Some(frame),
            )?
        } else {
            let ms = sense(frame, &op_nk, &geom)?;
            // Candidates: frames already recovered inside this GOP.
            let gop_start = (i / cfg.gop_size) * cfg.gop_size;
            let candidates: Vec<Image> = recovered[gop_start..i].to_vec();
            let si = select_si(&ms, &candidates, &op_nk, &geom, cfg.tau2)?;
            recover_nonkey(&ms, &op_nk, &geom, &si, cfg, Some(frame))?
        };
        let seconds = start.elapsed().as_secs_f64();
        let psnr_db = psnr(frame, &solution.image.clamped())?;
        report.push(FrameReport {
            index: i,
            is_key: key,
            subrate: if key {
                op_key.subrate()
            } else {
                op_nk.subrate()
            },
            psnr_db,
            iterations: solution.trace.records.len(),
            seconds,
        });
        recovered.push(solution.image);
    }

    Ok(DcvsOutcome { recovered, report })
}
