//! Batch experiment runner: configuration, recovery dispatch, and CSV
//! emission.
//!
//! The results CSV is deterministic given the seed; wall-clock timings are
//! logged to stderr instead of the CSV so repeated runs stay
//! byte-identical. An empty trailing column is reserved for externally
//! computed FSIM values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::gradient::GradientScope;
use crate::image::Image;
use crate::io;
use crate::metrics::psnr;
use crate::patch::TransformMode;
use crate::refine::{solve_refined, RefineParams};
use crate::sensing::{make_gaussian_operator, sense};
use crate::tv::{solve_tv, MultiplierFilter};
use crate::video::{run_dcvs, subrate_to_rows, DcvsConfig};

/// Recovery method selector, as exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mbtv,
    MbtvNllm,
    Gst,
    Lst,
    Cst,
    Dcvs,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mbtv" => Ok(Method::Mbtv),
            "mbtv-nllm" | "nllm" => Ok(Method::MbtvNllm),
            "gst" | "mbtv-nllm-gst" => Ok(Method::Gst),
            "lst" | "mbtv-nllm-lst" => Ok(Method::Lst),
            "cst" | "mbtv-nllm-cst" => Ok(Method::Cst),
            "dcvs" => Ok(Method::Dcvs),
            other => Err(Error::InvalidParameter(format!(
                "unknown method '{other}' (expected mbtv, mbtv-nllm, gst, lst, cst, or dcvs)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Mbtv => "mbtv",
            Method::MbtvNllm => "mbtv-nllm",
            Method::Gst => "gst",
            Method::Lst => "lst",
            Method::Cst => "cst",
            Method::Dcvs => "dcvs",
        };
        f.write_str(name)
    }
}

impl Method {
    pub fn transform_mode(&self) -> Option<TransformMode> {
        match self {
            Method::Gst => Some(TransformMode::Global),
            Method::Lst => Some(TransformMode::Local),
            Method::Cst => Some(TransformMode::Combined),
            _ => None,
        }
    }
}

/// Everything a batch run needs. Defaults mirror the reference protocol;
/// any field can be overridden from the config file or CLI flags.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub inputs: Vec<PathBuf>,
    pub method: Method,
    pub block_side: usize,
    pub subrates: Vec<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub refine: RefineParams,
    pub video: DcvsConfig,
    /// Height and width for raw Y-only video inputs.
    pub video_size: Option<(usize, usize)>,
    /// Write recovered images next to the CSV.
    pub save_images: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            method: Method::MbtvNllm,
            block_side: 32,
            subrates: vec![0.1, 0.2, 0.3, 0.4],
            seed: 1,
            out_dir: PathBuf::from("out"),
            refine: RefineParams::default(),
            video: DcvsConfig::default(),
            video_size: None,
            save_images: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::InvalidParameter("no input paths given".into()));
        }
        if self.subrates.is_empty() {
            return Err(Error::InvalidParameter("no subrates given".into()));
        }
        for &s in &self.subrates {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "subrate {s} outside (0, 1]"
                )));
            }
        }
        if self.block_side == 0 {
            return Err(Error::InvalidParameter("block side must be positive".into()));
        }
        Ok(())
    }
}

/// Formats a float with six significant digits, printf %g style.
pub fn g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..6).contains(&exp) {
        format!("{:.5e}", x)
    } else {
        let decimals = (5 - exp).max(0) as usize;
        format!("{:.*}", decimals, x)
    }
}

/// One results-table row.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub image: String,
    pub subrate: f64,
    pub method: Method,
    pub block_side: usize,
    pub seed: u64,
    pub psnr_db: f64,
    pub iterations: usize,
}

pub const RESULTS_HEADER: &str = "image,subrate,method,block_side,seed,psnr_db,iterations,fsim";

/// Renders rows into the fixed-schema CSV. The trailing fsim column stays
/// empty for external tools.
pub fn rows_to_csv(rows: &[ExperimentRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},\n",
            r.image,
            g6(r.subrate),
            r.method,
            r.block_side,
            r.seed,
            g6(r.psnr_db),
            r.iterations
        ));
    }
    out
}

fn input_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_frames(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<Image>> {
    if path.is_dir() {
        io::read_pgm_dir(path)
    } else if let Some((h, w)) = cfg.video_size {
        io::read_raw_video(path, h, w)
    } else {
        Err(Error::InvalidParameter(
            "raw video input needs video_size (height, width)".into(),
        ))
    }
}

/// Recovers one still image cell and reports (recovery, iterations).
pub fn recover_cell(
    truth: &Image,
    subrate: f64,
    method: Method,
    cfg: &ExperimentConfig,
) -> Result<(Image, usize)> {
    let geom = crate::block::BlockGeometry::for_image(truth.height(), truth.width(), cfg.block_side)?;
    let n = geom.block_len();
    let m = subrate_to_rows(subrate, n);
    let op = make_gaussian_operator(m, n, cfg.seed)?;
    let ms = sense(truth, &op, &geom)?;
    let mut refine = cfg.refine.clone();
    refine.tv.filter = if method == Method::Mbtv {
        MultiplierFilter::Identity
    } else {
        MultiplierFilter::Nlm
    };
    let solution = match method.transform_mode() {
        Some(mode) => solve_refined(&ms, &op, &geom, mode, &refine, Some(truth))?,
        None => solve_tv(&ms, &op, &geom, &refine.tv, Some(truth))?,
    };
    let iterations = solution.trace.records.len();
    Ok((solution.image, iterations))
}

/// Runs every (input, subrate) cell, writes results.csv (plus recovered
/// images and per-frame video reports), and returns the rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    let mut rows = Vec::new();

    for input in &cfg.inputs {
        for &subrate in &cfg.subrates {
            let started = Instant::now();
            let (psnr_db, iterations) = if cfg.method == Method::Dcvs {
                let frames = load_frames(cfg, input)?;
                let mut vcfg = cfg.video.clone();
                vcfg.nonkey_subrate = subrate;
                vcfg.seed = cfg.seed;
                vcfg.refine = cfg.refine.clone();
                vcfg.block_side = cfg.block_side;
                vcfg.mh.block_side = cfg.block_side;
                let outcome = run_dcvs(&frames, &vcfg)?;
                let report_path = cfg.out_dir.join(format!(
                    "{}_s{}_dcvs_report.csv",
                    input_stem(input),
                    g6(subrate)
                ));
                io::write_text(&report_path, &crate::video::report_to_csv(&outcome.report))?;
                if cfg.save_images {
                    for (i, frame) in outcome.recovered.iter().enumerate() {
                        let p = cfg.out_dir.join(format!(
                            "{}_s{}_f{:04}.pgm",
                            input_stem(input),
                            g6(subrate),
                            i
                        ));
                        io::write_pgm(frame, &p)?;
                    }
                }
                let mean_psnr = outcome.report.iter().map(|r| r.psnr_db).sum::<f64>()
                    / outcome.report.len() as f64;
                let iters = outcome.report.iter().map(|r| r.iterations).sum();
                (mean_psnr, iters)
            } else {
                let truth = io::read_pgm(input)?;
                let (recovered, iterations) = recover_cell(&truth, subrate, cfg.method, cfg)?;
                if cfg.save_images {
                    let p = cfg.out_dir.join(format!(
                        "{}_s{}_{}.pgm",
                        input_stem(input),
                        g6(subrate),
                        cfg.method
                    ));
                    io::write_pgm(&recovered, &p)?;
                }
                (psnr(&truth, &recovered.clamped())?, iterations)
            };
            eprintln!(
                "{} subrate {} method {}: {:.2} dB in {:.1}s",
                input_stem(input),
                g6(subrate),
                cfg.method,
                psnr_db,
                started.elapsed().as_secs_f64()
            );
            rows.push(ExperimentRow {
                image: input_stem(input),
                subrate,
                method: cfg.method,
                block_side: cfg.block_side,
                seed: cfg.seed,
                psnr_db,
                iterations,
            });
        }
    }

    let csv = rows_to_csv(&rows);
    io::write_text(&cfg.out_dir.join("results.csv"), &csv)?;
    Ok(rows)
}

/// Parses the key-value config format: one `key = value` per line, `#`
/// comments, comma-separated lists.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let bad = |line: usize, msg: String| {
        Error::InvalidParameter(format!("config line {}: {}", line + 1, msg))
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(i, "expected key = value".into()))?;
        let key = key.trim();
        let value = value.trim();
        let parse_f64 =
            |v: &str| -> Result<f64> { v.parse().map_err(|_| bad(i, format!("bad number '{v}'"))) };
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| bad(i, format!("bad integer '{v}'")))
        };
        match key {
            "input" => cfg
                .inputs
                .extend(value.split(',').map(|s| PathBuf::from(s.trim()))),
            "method" => cfg.method = value.parse()?,
            "block_side" => cfg.block_side = parse_usize(value)?,
            "subrates" => {
                cfg.subrates = value
                    .split(',')
                    .map(|s| parse_f64(s.trim()))
                    .collect::<Result<Vec<_>>>()?
            }
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|_| bad(i, format!("bad seed '{value}'")))?
            }
            "out_dir" => cfg.out_dir = PathBuf::from(value),
            "save_images" => {
                cfg.save_images = value
                    .parse()
                    .map_err(|_| bad(i, format!("bad bool '{value}'")))?
            }
            "beta" => cfg.refine.tv.beta = parse_f64(value)?,
            "mu" => cfg.refine.tv.mu = parse_f64(value)?,
            "inner_tol" => cfg.refine.tv.inner_tol = parse_f64(value)?,
            "outer_tol" => cfg.refine.tv.outer_tol = parse_f64(value)?,
            "max_inner" => cfg.refine.tv.max_inner = parse_usize(value)?,
            "max_outer" => cfg.refine.tv.max_outer = parse_usize(value)?,
            "scope" => {
                cfg.refine.tv.scope = match value {
                    "frame" => GradientScope::Frame,
                    "block" => GradientScope::PerBlock {
                        block_side: cfg.block_side,
                    },
                    other => {
                        let span = other
                            .strip_prefix("span:")
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| {
                                bad(i, format!("bad scope '{other}' (frame, block, span:N)"))
                            })?;
                        GradientScope::MultiBlock {
                            block_side: cfg.block_side,
                            span,
                        }
                    }
                }
            }
            "nlm_patch_side" => cfg.refine.tv.nlm.patch_side = parse_usize(value)?,
            "nlm_search_side" => cfg.refine.tv.nlm.search_side = parse_usize(value)?,
            "nlm_smoothing" => cfg.refine.tv.nlm.smoothing = parse_f64(value)?,
            "patch_side" => cfg.refine.patch.patch_side = parse_usize(value)?,
            "group_size" => cfg.refine.patch.group_size = parse_usize(value)?,
            "stride" => cfg.refine.patch.stride = parse_usize(value)?,
            "search_window" => cfg.refine.patch.search_window = parse_usize(value)?,
            "mu1" => cfg.refine.mu1 = parse_f64(value)?,
            "refine_max_iters" => cfg.refine.max_iters = parse_usize(value)?,
            "refine_tol" => cfg.refine.tol = parse_f64(value)?,
            "tau_hard" => cfg.refine.tau_override = Some(parse_f64(value)?),
            "gop_size" => cfg.video.gop_size = parse_usize(value)?,
            "key_subrate" => cfg.video.key_subrate = parse_f64(value)?,
            "tau2" => cfg.video.tau2 = parse_f64(value)?,
            "mu2" => cfg.video.mu2 = parse_f64(value)?,
            "mu3" => cfg.video.mu3 = parse_f64(value)?,
            "mh_radius" => cfg.video.mh.search_radius = parse_usize(value)?,
            "tikhonov_weight" => cfg.video.mh.tikhonov_weight = parse_f64(value)?,
            "si_refresh" => cfg.video.si_refresh_period = parse_usize(value)?,
            "nonkey_max_iters" => cfg.video.nonkey_max_iters = parse_usize(value)?,
            "nonkey_tol" => cfg.video.nonkey_tol = parse_f64(value)?,
            "video_height" => {
                let h = parse_usize(value)?;
                cfg.video_size = Some((h, cfg.video_size.map(|(_, w)| w).unwrap_or(0)));
            }
            "video_width" => {
                let w = parse_usize(value)?;
                cfg.video_size = Some((cfg.video_size.map(|(h, _)| h).unwrap_or(0), w));
            }
            other => return Err(bad(i, format!("unknown key '{other}'"))),
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for (s, m) in [
            ("mbtv", Method::Mbtv),
            ("MBTV-NLLM", Method::MbtvNllm),
            ("gst", Method::Gst),
            ("LST", Method::Lst),
            ("cst", Method::Cst),
            ("dcvs", Method::Dcvs),
        ] {
            assert_eq!(s.parse::<Method>().unwrap(), m);
        }
        assert!("tv".parse::<Method>().is_err());
    }

    #[test]
    fn g6_gives_six_significant_digits() {
        assert_eq!(g6(0.0), "0");
        assert_eq!(g6(26.1345), "26.1345");
        assert_eq!(g6(0.099609375), "0.0996094");
        assert_eq!(g6(123456.0), "123456");
        assert_eq!(g6(1234567.0), "1.23457e6");
        assert_eq!(g6(f64::INFINITY), "inf");
    }

    #[test]
    fn config_parse_and_defaults() {
        let text = "
# comment
input = a.pgm, b.pgm
method = cst
block_side = 16
subrates = 0.1, 0.2
seed = 9
beta = 64
nlm_smoothing = 0.25
tau_hard = 12.5
scope = span:2
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.inputs.len(), 2);
        assert_eq!(cfg.method, Method::Cst);
        assert_eq!(cfg.block_side, 16);
        assert_eq!(cfg.subrates, vec![0.1, 0.2]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.refine.tv.beta, 64.0);
        assert_eq!(cfg.refine.tv.nlm.smoothing, 0.25);
        assert_eq!(cfg.refine.tau_override, Some(12.5));
        assert_eq!(
            cfg.refine.tv.scope,
            GradientScope::MultiBlock {
                block_side: 16,
                span: 2
            }
        );
        // Untouched keys keep their defaults.
        assert_eq!(cfg.refine.tv.mu, 32.0);
        assert_eq!(cfg.refine.patch.group_size, 60);
        assert!(parse_config("nonsense = 1").is_err());
        assert!(parse_config("subrates = 1.5").map(|c| c.validate()).unwrap().is_err());
    }

    #[test]
    fn csv_schema_is_stable() {
        let rows = vec![ExperimentRow {
            image: "probe".into(),
            subrate: 0.2,
            method: Method::MbtvNllm,
            block_side: 32,
            seed: 1,
            psnr_db: 26.134511,
            iterations: 42,
        }];
        let csv = rows_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER);
        assert_eq!(lines.next().unwrap(), "probe,0.200000,mbtv-nllm,32,1,26.1345,42,");
    }
}
