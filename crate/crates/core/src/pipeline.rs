//! End-to-end orchestration: sequence tracking, marker recovery, overlay
//! rendering, evaluation against ground truth and the deterministic versus
//! stochastic comparison. File-level entry points back the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{accumulate, hausdorff_sets, narrowband_rmse, DEFAULT_BAND};
use crate::filter::{init_ensemble, FilterConfig, StepDiagnostics};
use crate::flow::{horn_schunck, FlowParams};
use crate::grid::{LabelMap, ScalarField, VectorField};
use crate::io;
use crate::levelset::{extract_contour, sdf_from_mask, Contour, Correspondence, SignedDistance};
use crate::sde::SdeParams;
use crate::synth::{self, ClassModel, DeformationSpec};

/// In-memory tracking options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackOptions {
    pub flow: FlowParams,
    pub filter: FilterConfig,
    /// Label of the tracked structure in the initial mask.
    pub inside_class: u8,
    /// Initial-frame interface points whose paths are followed through `psi`.
    pub markers: Vec<[f64; 2]>,
    pub workers: usize,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions {
            flow: FlowParams::default(),
            filter: FilterConfig::default(),
            inside_class: 1,
            markers: Vec::new(),
            workers: 1,
        }
    }
}

/// Per-frame tracking output; index 0 is the initial state.
#[derive(Debug, Clone)]
pub struct TrackResult {
    pub phi: Vec<SignedDistance>,
    pub psi: Vec<Correspondence>,
    pub contours: Vec<Vec<Contour>>,
    /// `markers[frame][marker]`.
    pub markers: Vec<Vec<[f64; 2]>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub flows: Vec<VectorField>,
}

/// Position on the current grid whose backward correspondence is `target`:
/// the pixel minimizing `|psi(x) - target|`, refined by Newton steps on the
/// bilinear interpolant of `psi`.
pub fn locate_marker(psi: &Correspondence, target: [f64; 2]) -> [f64; 2] {
    let f = &psi.field;
    let (w, h) = f.dims();
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = f.get(x, y);
            let d = (u - target[0]).hypot(v - target[1]);
            if d < best.0 {
                best = (d, x, y);
            }
        }
    }
    let (x0, y0) = (best.1 as f64, best.2 as f64);
    let (mut px, mut py) = (x0, y0);
    let eps = 1e-3;
    for _ in 0..8 {
        let ru = f.u.sample(px, py) - target[0];
        let rv = f.v.sample(px, py) - target[1];
        if ru.hypot(rv) < 1e-6 {
            break;
        }
        let jxx = (f.u.sample(px + eps, py) - f.u.sample(px - eps, py)) / (2.0 * eps);
        let jxy = (f.u.sample(px, py + eps) - f.u.sample(px, py - eps)) / (2.0 * eps);
        let jyx = (f.v.sample(px + eps, py) - f.v.sample(px - eps, py)) / (2.0 * eps);
        let jyy = (f.v.sample(px, py + eps) - f.v.sample(px, py - eps)) / (2.0 * eps);
        let det = jxx * jyy - jxy * jyx;
        if det.abs() < 1e-9 {
            break;
        }
        let sx = (jyy * ru - jxy * rv) / det;
        let sy = (-jyx * ru + jxx * rv) / det;
        // stay in the neighbourhood of the best pixel
        px = (px - sx).clamp(x0 - 1.5, x0 + 1.5).clamp(0.0, (w - 1) as f64);
        py = (py - sy).clamp(y0 - 1.5, y0 + 1.5).clamp(0.0, (h - 1) as f64);
    }
    [px, py]
}

/// Point on the zero contour whose backward correspondence is closest to
/// `target`. `psi` is taken as linear along each contour segment, so the
/// minimizer has a closed form per segment. Falls back to [`locate_marker`]
/// when there is no contour.
pub fn locate_marker_on_contour(contours: &[Contour], psi: &Correspondence, target: [f64; 2]) -> [f64; 2] {
    let f = &psi.field;
    let corr = |p: [f64; 2]| [f.u.sample(p[0], p[1]), f.v.sample(p[0], p[1])];
    let mut best = (f64::INFINITY, None);
    for (a, b) in contours.iter().flat_map(Contour::segments) {
        let (qa, qb) = (corr(a), corr(b));
        let d = [qb[0] - qa[0], qb[1] - qa[1]];
        let r = [target[0] - qa[0], target[1] - qa[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > 0.0 { ((r[0] * d[0] + r[1] * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let miss = (r[0] - t * d[0]).hypot(r[1] - t * d[1]);
        if miss < best.0 {
            best = (miss, Some([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]));
        }
    }
    best.1.unwrap_or_else(|| locate_marker(psi, target))
}

/// Runs the filter over `images`, starting from the segmentation of frame 0.
/// Markers are recovered on the estimated contour of each frame.
pub fn track_sequence(images: &[ScalarField], initial: &LabelMap, opts: &TrackOptions) -> Result<TrackResult> {
    if images.len() < 2 {
        return Err(Error::Parameter("tracking needs at least two frames".into()));
    }
    let dims = images[0].dims();
    if let Some(bad) = images.iter().position(|f| f.dims() != dims) {
        return Err(Error::Parameter(format!("frame {bad} has size {:?}, expected {dims:?}", images[bad].dims())));
    }
    if initial.dims() != dims {
        return Err(Error::Parameter(format!(
            "initial mask is {:?} but frames are {dims:?}",
            initial.dims()
        )));
    }
    if opts.workers == 0 {
        return Err(Error::Parameter("worker count must be >= 1".into()));
    }
    opts.flow.validate()?;
    opts.filter.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;

    let phi0 = sdf_from_mask(initial, opts.inside_class)?;
    let psi0 = Correspondence::identity(dims.0, dims.1)?;
    let mut ensemble = init_ensemble(&phi0, &psi0, &opts.filter)?;

    let contours0 = extract_contour(&phi0.field);
    let mut out = TrackResult {
        markers: vec![opts.markers.iter().map(|&m| locate_marker_on_contour(&contours0, &psi0, m)).collect()],
        contours: vec![contours0],
        phi: vec![phi0],
        psi: vec![psi0],
        diagnostics: Vec::with_capacity(images.len() - 1),
        flows: Vec::with_capacity(images.len() - 1),
    };
    for frame in 1..images.len() {
        let flow = horn_schunck(&images[frame - 1], &images[frame], &opts.flow)?;
        let diag = pool.install(|| ensemble.step(&flow, &images[frame], frame, &opts.filter))?;
        let (phi, psi) = ensemble.estimate()?;
        let contours = extract_contour(&phi.field);
        out.markers.push(opts.markers.iter().map(|&m| locate_marker_on_contour(&contours, &psi, m)).collect());
        out.contours.push(contours);
        out.phi.push(phi);
        out.psi.push(psi);
        out.diagnostics.push(diag);
        out.flows.push(flow);
    }
    Ok(out)
}

/// Per-frame accuracy of a tracked sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hausdorff: Vec<f64>,
    pub band_rmse: Vec<f64>,
}

impl EvalReport {
    pub fn max_hausdorff(&self) -> f64 {
        self.hausdorff.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_rmse(&self) -> f64 {
        accumulate(&self.band_rmse) / self.band_rmse.len().max(1) as f64
    }

    pub fn accumulated_rmse(&self) -> f64 {
        accumulate(&self.band_rmse)
    }
}

/// Scores estimates against ground-truth masks frame by frame. Truth
/// distance fields come from fast marching on the masks.
pub fn evaluate(estimates: &[SignedDistance], truth: &[LabelMap], inside_class: u8, band: f64) -> Result<EvalReport> {
    if estimates.len() != truth.len() {
        return Err(Error::Parameter(format!(
            "{} estimates but {} ground-truth frames",
            estimates.len(),
            truth.len()
        )));
    }
    let mut report = EvalReport { hausdorff: Vec::new(), band_rmse: Vec::new() };
    for (est, mask) in estimates.iter().zip(truth) {
        let t = sdf_from_mask(mask, inside_class)?;
        report.band_rmse.push(narrowband_rmse(est, &t, band)?);
        let ce = extract_contour(&est.field);
        let ct = extract_contour(&t.field);
        report.hausdorff.push(if ce.is_empty() { f64::INFINITY } else { hausdorff_sets(&ce, &ct)? });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub deterministic_accumulated: f64,
    pub stochastic_accumulated: f64,
    /// Deterministic over stochastic accumulated error.
    pub ratio: f64,
}

/// Tracks the sequence twice, once with the noise-free single-particle
/// model and once with the configured stochastic filter, and scores both
/// on frames `1..` against `truth`.
pub fn compare_modes(
    images: &[ScalarField],
    truth: &[LabelMap],
    opts: &TrackOptions,
    band: f64,
) -> Result<(CompareReport, EvalReport, EvalReport)> {
    let mut det = opts.clone();
    det.filter.n_particles = 1;
    det.filter.sde = det.filter.sde.deterministic();
    let det_run = track_sequence(images, &truth[0], &det)?;
    let sto_run = track_sequence(images, &truth[0], opts)?;
    let det_eval = evaluate(&det_run.phi[1..], &truth[1..], opts.inside_class, band)?;
    let sto_eval = evaluate(&sto_run.phi[1..], &truth[1..], opts.inside_class, band)?;
    let (d, s) = (det_eval.accumulated_rmse(), sto_eval.accumulated_rmse());
    let report = CompareReport { deterministic_accumulated: d, stochastic_accumulated: s, ratio: d / s };
    Ok((report, det_eval, sto_eval))
}

/// Stamps the contours into a copy of `image` at intensity `value`.
pub fn render_overlay(image: &ScalarField, contours: &[Contour], value: f64) -> ScalarField {
    let mut out = image.clone();
    let (w, h) = image.dims();
    let mut stamp = |p: [f64; 2]| {
        let (x, y) = (p[0].round(), p[1].round());
        if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
            out.set(x as usize, y as usize, value);
        }
    };
    for c in contours {
        for (a, b) in c.segments() {
            let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                stamp([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        if c.points.len() == 1 {
            stamp(c.points[0]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// file-level interfaces

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    write_text(path, &text)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Shape of the frame-0 label map for `synth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InitialShape {
    /// Class 1 below `level`.
    Layer { level: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub initial: InitialShape,
    pub deformation: DeformationSpec,
    #[serde(default)]
    pub model: ClassModel,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_gamma() -> f64 {
    2.0
}

/// Written next to the frames produced by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub frames: Vec<String>,
    pub truth: Vec<String>,
    pub spec: DeformationSpec,
    pub model: ClassModel,
    pub gamma: f64,
    pub seed: u64,
    pub inside_class: u8,
}

impl SynthConfig {
    pub fn initial_mask(&self) -> Result<LabelMap> {
        match self.initial {
            InitialShape::Layer { level } => synth::layered_mask(self.width, self.height, level),
            InitialShape::Disk { cx, cy, r } => synth::disk_mask(self.width, self.height, cx, cy, r),
        }
    }
}

pub fn run_synth(config: &SynthConfig, out_dir: &Path) -> Result<SequenceManifest> {
    ensure_dir(out_dir)?;
    let initial = config.initial_mask()?;
    let seq = synth::generate_sequence(&initial, &config.deformation, &config.model, config.gamma, config.seed)?;
    let mut manifest = SequenceManifest {
        frames: Vec::new(),
        truth: Vec::new(),
        spec: config.deformation,
        model: config.model.clone(),
        gamma: config.gamma,
        seed: config.seed,
        inside_class: 1,
    };
    for (t, (img, mask)) in seq.images.iter().zip(&seq.truth).enumerate() {
        let (f, m) = (format!("frame_{t:03}.pgm"), format!("truth_{t:03}.pgm"));
        io::save_pgm(img, out_dir.join(&f), io::BitDepth::Sixteen)?;
        io::save_labels(mask, out_dir.join(&m))?;
        manifest.frames.push(f);
        manifest.truth.push(m);
    }
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Where `track` finds its frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameSource {
    /// Path of a `synth` manifest.
    Manifest { manifest: PathBuf },
    /// Explicit ordered list of raster paths.
    List { frames: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Overlay intensity of the stamped contour, in `[0, 1]`.
    #[serde(default = "default_contour_value")]
    pub contour_value: f64,
    #[serde(default)]
    pub markers: Vec<[f64; 2]>,
}

fn default_contour_value() -> f64 {
    1.0
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { contour_value: 1.0, markers: Vec::new() }
    }
}

/// JSON run configuration for `track`. Relative paths resolve against
/// the configuration file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: FrameSource,
    /// Initial segmentation; defaults to the manifest's first truth mask.
    #[serde(default)]
    pub initial_mask: Option<PathBuf>,
    #[serde(default = "default_inside")]
    pub inside_class: u8,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Overrides `filter.sde` when present.
    #[serde(default)]
    pub sde: Option<SdeParams>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub render: RenderOptions,
}

fn default_inside() -> u8 {
    1
}

fn default_workers() -> usize {
    1
}

/// Frames and initial mask resolved from a [`RunConfig`].
pub struct ResolvedInput {
    pub frame_paths: Vec<PathBuf>,
    pub initial_mask: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.input {
            FrameSource::Manifest { manifest } => fix(manifest),
            FrameSource::List { frames } => frames.iter_mut().for_each(fix),
        }
        if let Some(p) = &mut self.initial_mask {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    /// Checks paths and parameters.
    pub fn resolve(&self) -> Result<ResolvedInput> {
        if self.workers == 0 {
            return Err(Error::Parameter("worker count must be >= 1".into()));
        }
        self.flow.validate()?;
        self.track_options().filter.validate()?;
        let (frame_paths, manifest_mask) = match &self.input {
            FrameSource::Manifest { manifest } => {
                let m: SequenceManifest = read_json(manifest)?;
                let dir = manifest.parent().unwrap_or(Path::new("."));
                let frames = m.frames.iter().map(|f| dir.join(f)).collect();
                (frames, m.truth.first().map(|t| dir.join(t)))
            }
            FrameSource::List { frames } => (frames.clone(), None),
        };
        let initial_mask = self
            .initial_mask
            .clone()
            .or(manifest_mask)
            .ok_or_else(|| Error::Parameter("no initial mask configured".into()))?;
        for p in frame_paths.iter().chain(std::iter::once(&initial_mask)) {
            if !p.exists() {
                return Err(Error::Parameter(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(ResolvedInput { frame_paths, initial_mask })
    }

    pub fn track_options(&self) -> TrackOptions {
        let mut filter = self.filter;
        if let Some(sde) = self.sde {
            filter.sde = sde;
        }
        TrackOptions {
            flow: self.flow,
            filter,
            inside_class: self.inside_class,
            markers: self.render.markers.clone(),
            workers: self.workers,
        }
    }
}

/// Index of the files written by `track`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateManifest {
    pub phi: Vec<String>,
    pub contours: Vec<String>,
    pub overlays: Vec<String>,
    pub inside_class: u8,
}

/// File-level `track`: reads inputs, runs the filter and writes per-frame
/// contours, distance fields, overlays, marker paths and diagnostics.
pub fn run_track(config: &RunConfig, out_dir: &Path) -> Result<TrackResult> {
    let input = config.resolve()?;
    let images: Vec<ScalarField> = input.frame_paths.iter().map(io::load_image).collect::<Result<_>>()?;
    let mask = io::load_labels(&input.initial_mask, None)?;
    let opts = config.track_options();
    let result = track_sequence(&images, &mask, &opts)?;
    ensure_dir(out_dir)?;

    let mut manifest = EstimateManifest {
        phi: Vec::new(),
        contours: Vec::new(),
        overlays: Vec::new(),
        inside_class: config.inside_class,
    };
    for (t, (phi, contours)) in result.phi.iter().zip(&result.contours).enumerate() {
        let (p, c, o) = (format!("phi_{t:03}.ctf"), format!("contour_{t:03}.csv"), format!("overlay_{t:03}.pgm"));
        io::save_scalar_ctf(&phi.field, out_dir.join(&p))?;
        io::save_contours_csv(contours, out_dir.join(&c))?;
        let overlay = render_overlay(&images[t], contours, config.render.contour_value);
        io::save_pgm(&overlay, out_dir.join(&o), io::BitDepth::Eight)?;
        manifest.phi.push(p);
        manifest.contours.push(c);
        manifest.overlays.push(o);
    }
    write_json(&out_dir.join("manifest.json"), &manifest)?;

    let mut markers = String::from("frame,marker,x,y\n");
    for (t, ms) in result.markers.iter().enumerate() {
        for (k, m) in ms.iter().enumerate() {
            markers.push_str(&format!("{t},{k},{:.6},{:.6}\n", m[0], m[1]));
        }
    }
    write_text(&out_dir.join("markers.csv"), &markers)?;

    let mut diag = String::from("frame,ess,max_log_likelihood,resampled,wall_ms\n");
    for d in &result.diagnostics {
        diag.push_str(&format!(
            "{},{:.6},{:.6},{},{:.3}\n",
            d.frame,
            d.ess,
            d.max_log_likelihood,
            u8::from(d.resampled),
            d.wall_ms
        ));
    }
    write_text(&out_dir.join("diagnostics.csv"), &diag)?;
    Ok(result)
}

/// Summary line of `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub max_hausdorff: f64,
    pub mean_hausdorff: f64,
    pub max_rmse: f64,
    pub mean_rmse: f64,
    pub accumulated_rmse: f64,
}

/// File-level `eval`: compares a `track` output directory with a `synth`
/// output directory and writes the per-frame CSV plus a JSON summary next
/// to it (`<out>.summary.json`).
pub fn run_eval(estimate_dir: &Path, truth_dir: &Path, band: f64, out_csv: &Path) -> Result<EvalSummary> {
    let est: EstimateManifest = read_json(&estimate_dir.join("manifest.json"))?;
    let truth: SequenceManifest = read_json(&truth_dir.join("manifest.json"))?;
    let n = est.phi.len().min(truth.truth.len());
    if n == 0 {
        return Err(Error::Parameter("no frames to evaluate".into()));
    }
    let phis: Vec<SignedDistance> = est.phi[..n]
        .iter()
        .map(|p| io::load_scalar_ctf(estimate_dir.join(p)).map(SignedDistance::from_field))
        .collect::<Result<_>>()?;
    let masks: Vec<LabelMap> =
        truth.truth[..n].iter().map(|m| io::load_labels(truth_dir.join(m), None)).collect::<Result<_>>()?;
    let report = evaluate(&phis, &masks, truth.inside_class, band)?;

    let mut csv = String::from("frame,hausdorff,band_rmse,accumulated_rmse\n");
    let mut acc = 0.0;
    for (t, (h, r)) in report.hausdorff.iter().zip(&report.band_rmse).enumerate() {
        acc += r;
        csv.push_str(&format!("{t},{h:.6},{r:.6},{acc:.6}\n"));
    }
    write_text(out_csv, &csv)?;
    let summary = EvalSummary {
        frames: n,
        max_hausdorff: report.max_hausdorff(),
        mean_hausdorff: accumulate(&report.hausdorff) / n as f64,
        max_rmse: report.band_rmse.iter().copied().fold(0.0, f64::max),
        mean_rmse: report.mean_rmse(),
        accumulated_rmse: report.accumulated_rmse(),
    };
    let mut summary_path = out_csv.as_os_str().to_owned();
    summary_path.push(".summary.json");
    write_json(Path::new(&summary_path), &summary)?;
    Ok(summary)
}

/// Loads the frames and truth masks listed in a `synth` manifest.
pub fn load_sequence(manifest_path: &Path) -> Result<(Vec<ScalarField>, Vec<LabelMap>, SequenceManifest)> {
    let m: SequenceManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let images = m.frames.iter().map(|f| io::load_image(dir.join(f))).collect::<Result<_>>()?;
    let masks = m.truth.iter().map(|f| io::load_labels(dir.join(f), None)).collect::<Result<_>>()?;
    Ok((images, masks, m))
}

pub const DEFAULT_EVAL_BAND: f64 = DEFAULT_BAND;
