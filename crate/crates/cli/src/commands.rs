//! The pipeline stages. Each reads upstream artifacts from the output
//! directory, checks they were built from the same config, and writes its
//! own artifacts plus a metadata sidecar.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use stdk_core::autodiff::{read_checkpoint, write_checkpoint, ParamSet, Tensor};
use stdk_core::basis::{Basis, WaterMask, FEATURE_LAYOUT_VERSION};
use stdk_core::forecast::{
    build_forecaster, build_sequences_with, build_stdk_forecaster, rasterize_basis, train_model, ForecastModel,
    ImageSequenceSample,
};
use stdk_core::gridstack::GridStack;
use stdk_core::ingest::{make_grid, parse_station_csv, preprocess_stations, split_indices, StandardizationParams};
use stdk_core::metrics::{evaluate, EvalReport};
use stdk_core::provenance::hash_bytes;
use stdk_core::stdk::{build_model, predict_quantiles, train_interpolator_grouped, StdkModel, TrainingHistory};
use stdk_core::Error;

use crate::config::{ForecastVariant, LoadedConfig, Palette};
use crate::error::{CliError, CliResult, EXIT_MISSING_INPUT, EXIT_SHAPE};
use crate::meta::{read_verified, Meta};
use crate::png;

pub const SERIES_FILE: &str = "series.csv";
pub const STANDARDIZATION_FILE: &str = "standardization.txt";
pub const INGEST_META: &str = "ingest.meta";
pub const INTERP_CHECKPOINT: &str = "interp.ckpt";
pub const INTERP_META: &str = "interp.meta";
pub const INTERPOLATED_STACK: &str = "interpolated.grds";
pub const FORECAST_CHECKPOINT: &str = "forecast.ckpt";
pub const FORECAST_META: &str = "forecast.meta";
pub const FORECAST_STACK: &str = "forecast.grds";
pub const FORECAST_TRUTH_STACK: &str = "forecast_truth.grds";
pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

const SERIES_HEADER: [&str; 8] = ["station_id", "lon", "lat", "u", "v", "day", "value", "split"];

/// Config plus output directory shared by the config-driven commands.
pub struct Context {
    pub cfg: LoadedConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cfg: LoadedConfig, out: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&out)?;
        fs::write(out.join(EFFECTIVE_CONFIG), cfg.echo()?)?;
        Ok(Self { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self) -> u64 {
        self.cfg.config.seed
    }

    fn meta(&self, kind: &str) -> Meta {
        let mut m = Meta::new(kind);
        m.set("config_hash", &self.cfg.hash).set("seed", self.seed());
        m
    }

    fn load_meta(&self, name: &str, kind: &str) -> CliResult<Meta> {
        let path = self.path(name);
        let m = Meta::load(&path)?;
        m.expect_kind(kind).map_err(|e| e.at(&path))?;
        m.expect("upstream artifact", "config_hash", &self.cfg.hash)
            .map_err(|e| e.at(&path))?;
        Ok(m)
    }

    fn provenance(&self, kind: &str, basis_hash: &str) -> String {
        let mut m = self.meta(kind);
        m.set("basis_hash", basis_hash);
        m.to_text()
    }

    fn load_stack(&self, name: &str, kind: &str) -> CliResult<GridStack> {
        let path = self.path(name);
        let stack = load_stack(&path)?;
        let m = Meta::parse(&stack.provenance).map_err(|e| e.at(&path))?;
        m.expect_kind(kind).map_err(|e| e.at(&path))?;
        m.expect("grid stack", "config_hash", &self.cfg.hash).map_err(|e| e.at(&path))?;
        Ok(stack)
    }
}

fn load_stack(path: &Path) -> CliResult<GridStack> {
    if !path.is_file() {
        return Err(CliError::missing(path));
    }
    GridStack::load(path).map_err(|e| CliError::from(e).at(path))
}

/// Basis for the config with its hash, which also covers the mask bytes.
fn build_basis(ctx: &Context) -> CliResult<(Basis, String)> {
    let section = &ctx.cfg.config.basis;
    let config = section.basis_config();
    let (mask, mask_hash) = match &section.water_mask {
        Some(p) => {
            let path = ctx.cfg.resolve(p);
            if !path.is_file() {
                return Err(CliError::missing(&path));
            }
            let bytes = fs::read(&path)?;
            let text = String::from_utf8_lossy(&bytes);
            let mask = WaterMask::parse(&text).map_err(|e| CliError::from(e).at(&path))?;
            let grid_bbox = ctx.cfg.config.grid.bbox()?;
            if !mask.bbox.approx_eq(&grid_bbox, 1e-9) {
                return Err(CliError::new(
                    EXIT_SHAPE,
                    format!("water mask extent {:?} differs from grid extent {grid_bbox:?}", mask.bbox),
                )
                .at(&path));
            }
            (Some(mask), hash_bytes(&bytes))
        }
        None => (None, "none".to_string()),
    };
    let basis = Basis::build(&config, mask.as_ref())?;
    let hash = hash_bytes(format!("{}mask={mask_hash}\n", config.canonical_text()).as_bytes());
    Ok((basis, hash))
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
struct SeriesRow {
    /// Index of the station in file order.
    station: usize,
    u: f64,
    v: f64,
    day: i64,
    value: Option<f64>,
    split: Split,
}

/// Smooths, standardizes and splits the station file; writes the series
/// table, the standardization parameters and a metadata sidecar.
pub fn ingest(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg.config;
    let path = ctx.cfg.resolve(&cfg.ingest.stations);
    if !path.is_file() {
        return Err(CliError::missing(&path));
    }
    let stations = parse_station_csv(&path).map_err(|e| CliError::from(e).at(&path))?;
    let bbox = cfg.grid.bbox()?;
    let total = stations.len();
    let stations: Vec<_> = stations.into_iter().filter(|s| bbox.contains(s.lon, s.lat)).collect();
    let dropped = total - stations.len();
    if dropped > 0 {
        log::warn!("{dropped} stations lie outside the grid extent and were dropped");
    }
    let (train, test) = split_indices(stations.len(), cfg.ingest.holdout_fraction, ctx.seed())?;
    let (processed, params) = preprocess_stations(&stations, cfg.ingest.window)?;

    let first = processed.iter().map(|s| s.start_date).min().expect("at least two stations");
    let last = processed.iter().map(|s| s.end_date()).max().expect("at least two stations");
    let n_days = (last - first).num_days() + 1;

    let mut is_test = vec![false; processed.len()];
    for &i in &test {
        is_test[i] = true;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SERIES_HEADER)?;
    for (i, s) in processed.iter().enumerate() {
        let (u, v) = bbox.to_unit(s.lon, s.lat);
        let offset = (s.start_date - first).num_days();
        for (k, value) in s.values.iter().enumerate() {
            w.write_record([
                s.station_id.clone(),
                s.lon.to_string(),
                s.lat.to_string(),
                u.to_string(),
                v.to_string(),
                (offset + k as i64).to_string(),
                value.map_or_else(String::new, |x| x.to_string()),
                if is_test[i] { "test" } else { "train" }.to_string(),
            ])?;
        }
    }
    let series = w.into_inner().map_err(|e| CliError::from(Error::Io(e.into_error())))?;
    let params_text = params.to_text();
    fs::write(ctx.path(SERIES_FILE), &series)?;
    fs::write(ctx.path(STANDARDIZATION_FILE), &params_text)?;

    let mut m = ctx.meta("ingest");
    m.set("first_date", first)
        .set("n_days", n_days)
        .set("stations", processed.len())
        .set("train_stations", train.len())
        .set("test_stations", test.len())
        .set("dropped_outside_grid", dropped)
        .set("series_sha256", hash_bytes(&series))
        .set("standardization_sha256", hash_bytes(params_text.as_bytes()));
    m.save(&ctx.path(INGEST_META))?;
    log::info!(
        "ingested {} stations over {n_days} days ({} train, {} test)",
        processed.len(),
        train.len(),
        test.len()
    );
    Ok(())
}

struct Ingested {
    rows: Vec<SeriesRow>,
    n_days: i64,
}

impl Ingested {
    /// Day index mapped onto the unit interval spanned by the record.
    fn time_coord(&self, day: i64) -> f64 {
        day as f64 / (self.n_days - 1).max(1) as f64
    }
}

fn load_ingested(ctx: &Context) -> CliResult<Ingested> {
    let meta = ctx.load_meta(INGEST_META, "ingest")?;
    let path = ctx.path(SERIES_FILE);
    let bytes = read_verified(&path, &meta, "series_sha256")?;
    let n_days: i64 = meta.parse_value("n_days")?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let bad = |line: usize, what: &str| CliError::from(Error::Parse {
        line: line as u64 + 2,
        message: format!("{}: bad {what}", path.display()),
    });
    let mut rows = Vec::new();
    let mut station_ids: HashMap<String, usize> = HashMap::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize, what: &str| field(i).parse::<f64>().map_err(|_| bad(n, what));
        let next = station_ids.len();
        rows.push(SeriesRow {
            station: *station_ids.entry(field(0).to_string()).or_insert(next),
            u: num(3, "u")?,
            v: num(4, "v")?,
            day: field(5).parse().map_err(|_| bad(n, "day"))?,
            value: if field(6).is_empty() { None } else { Some(num(6, "value")?) },
            split: match field(7) {
                "train" => Split::Train,
                "test" => Split::Test,
                _ => return Err(bad(n, "split")),
            },
        });
    }
    Ok(Ingested { rows, n_days })
}

// ---------------------------------------------------------- interpolator

struct Observed {
    points: Vec<(f64, f64, f64)>,
    targets: Vec<f64>,
    stations: Vec<usize>,
}

fn observed_points(data: &Ingested, split: Split) -> Observed {
    let mut obs = Observed {
        points: Vec::new(),
        targets: Vec::new(),
        stations: Vec::new(),
    };
    for r in data.rows.iter().filter(|r| r.split == split) {
        if let Some(y) = r.value {
            obs.points.push((r.u, r.v, data.time_coord(r.day)));
            obs.targets.push(y);
            obs.stations.push(r.station);
        }
    }
    obs
}

fn write_history(path: &Path, history: &[f64]) -> CliResult<()> {
    let mut text = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        text.push_str(&format!("{e},{l}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_interp_history(path: &Path, history: &TrainingHistory) -> CliResult<()> {
    let mut text = String::from("epoch,loss,validation_loss\n");
    for (e, l) in history.train.iter().enumerate() {
        let v = history.validation.get(e).map_or(String::new(), f64::to_string);
        text.push_str(&format!("{e},{l},{v}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

fn save_checkpoint(path: &Path, params: &ParamSet) -> CliResult<String> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, params)?;
    fs::write(path, &bytes)?;
    Ok(hash_bytes(&bytes))
}

fn write_report(ctx: &Context, stem: &str, report: &EvalReport) -> CliResult<()> {
    fs::write(ctx.path(&format!("{stem}.csv")), report.to_csv())?;
    fs::write(ctx.path(&format!("{stem}.txt")), format!("{report}\n"))?;
    Ok(())
}

/// Trains the interpolation network on training-station observations and
/// scores it on the held-out stations.
pub fn train_interp(ctx: &Context) -> CliResult<()> {
    let data = load_ingested(ctx)?;
    let (basis, basis_hash) = build_basis(ctx)?;
    let config = ctx.cfg.config.interp.model_config()?;
    let train = observed_points(&data, Split::Train);
    log::info!("training interpolator on {} observations, {} features", train.targets.len(), basis.width());
    let embeddings = basis.embed(&train.points)?;
    let (model, history) =
        train_interpolator_grouped(&embeddings, &train.targets, &train.stations, &config, ctx.seed())?;
    drop(embeddings);
    if let Some(best) = history.best_epoch {
        log::info!("kept epoch {best} (validation loss {:.6})", history.validation[best]);
    }

    let ckpt_hash = save_checkpoint(&ctx.path(INTERP_CHECKPOINT), &model.params)?;
    write_interp_history(&ctx.path("interp_history.csv"), &history)?;

    let Observed {
        points: test_points,
        targets: test_targets,
        ..
    } = observed_points(&data, Split::Test);
    if test_targets.is_empty() {
        log::warn!("no observed values at held-out stations; skipping evaluation");
    } else {
        let preds = predict_quantiles(&model, &basis.embed(&test_points)?)?;
        let col = |f: fn(&stdk_core::quantile::QuantileTriple) -> f64| preds.iter().map(f).collect::<Vec<_>>();
        let report = evaluate(&test_targets, &col(|t| t.lower), &col(|t| t.median), &col(|t| t.upper))?;
        log::info!("held-out stations: {}", report.to_string().replace('\n', ", "));
        write_report(ctx, "interp_eval", &report)?;
    }

    let mut m = ctx.meta("interp-checkpoint");
    m.set("basis_hash", &basis_hash)
        .set("layout_version", FEATURE_LAYOUT_VERSION)
        .set("input_dim", basis.width())
        .set("checkpoint_sha256", ckpt_hash)
        .set("final_loss", history.train.last().copied().unwrap_or(f64::NAN))
        .set("best_epoch", history.best_epoch.map_or("last".to_string(), |e| e.to_string()));
    m.save(&ctx.path(INTERP_META))?;
    Ok(())
}

fn load_interpolator(ctx: &Context, basis: &Basis, basis_hash: &str) -> CliResult<StdkModel> {
    let meta = ctx.load_meta(INTERP_META, "interp-checkpoint")?;
    meta.expect("interpolator checkpoint", "basis_hash", basis_hash)?;
    meta.expect("interpolator checkpoint", "layout_version", &FEATURE_LAYOUT_VERSION.to_string())?;
    let bytes = read_verified(&ctx.path(INTERP_CHECKPOINT), &meta, "checkpoint_sha256")?;
    let config = ctx.cfg.config.interp.model_config()?;
    let mut model = build_model(&config, basis.width(), ctx.seed())?;
    model.params.load_blocks(read_checkpoint(bytes.as_slice())?)?;
    Ok(model)
}

/// Quantile fields on the configured grid: a 3-channel stack of (lower,
/// median, upper) per time step.
pub fn interpolate(ctx: &Context) -> CliResult<()> {
    let data = load_ingested(ctx)?;
    let (basis, basis_hash) = build_basis(ctx)?;
    let model = load_interpolator(ctx, &basis, &basis_hash)?;
    let g = &ctx.cfg.config.grid;
    let t_count = g.t_count.unwrap_or(data.n_days as usize);
    let times = (0..t_count as i64).map(|k| g.t_start + k * g.t_step).collect();
    let grid = make_grid(g.bbox()?, g.nx, g.ny, times)?;

    let cells: Vec<(f64, f64)> = (0..grid.ny)
        .flat_map(|j| (0..grid.nx).map(move |i| (i, j)))
        .map(|(i, j)| grid.unit_center(i, j))
        .collect();
    let mut data_out = Vec::with_capacity(3 * grid.times.len() * cells.len());
    for &day in &grid.times {
        let tau = data.time_coord(day);
        let points: Vec<_> = cells.iter().map(|&(u, v)| (u, v, tau)).collect();
        let preds = predict_quantiles(&model, &basis.embed(&points)?)?;
        data_out.extend(preds.iter().map(|t| t.lower));
        data_out.extend(preds.iter().map(|t| t.median));
        data_out.extend(preds.iter().map(|t| t.upper));
    }
    let mut prov = Meta::parse(&ctx.provenance("interpolation", &basis_hash))?;
    prov.set("channels", "lower,median,upper")
        .set("t_start", g.t_start)
        .set("t_step", g.t_step);
    let stack = GridStack::new(3, grid.times.len(), grid.ny, grid.nx, data_out)?.with_provenance(prov.to_text());
    stack.save(ctx.path(INTERPOLATED_STACK))?;
    log::info!("interpolated {} steps on a {}x{} grid", grid.times.len(), grid.nx, grid.ny);
    Ok(())
}

// ------------------------------------------------------------ forecaster

/// Median frames of the interpolated stack as `[H x W]` tensors.
fn median_frames(stack: &GridStack) -> CliResult<Vec<Tensor>> {
    if stack.channels != 3 {
        return Err(CliError::new(EXIT_SHAPE, format!("expected a 3-channel stack, found {}", stack.channels)));
    }
    (0..stack.t)
        .map(|t| Ok(Tensor::new(vec![stack.h, stack.w], stack.frame(t, 1)?.to_vec())?))
        .collect()
}

/// Number of leading sequences used for training; the rest are forecast.
fn train_count(total: usize, holdout: f64) -> usize {
    if total < 2 {
        return total;
    }
    let test = ((total as f64 * holdout).floor() as usize).clamp(1, total - 1);
    total - test
}

fn forecast_samples(ctx: &Context) -> CliResult<(Vec<ImageSequenceSample>, usize, usize, usize)> {
    let stack = ctx.load_stack(INTERPOLATED_STACK, "interpolation")?;
    let section = &ctx.cfg.config.forecast;
    let samples = build_sequences_with(&median_frames(&stack)?, section.n_inputs, section.lead)?;
    let n_train = train_count(samples.len(), section.holdout_fraction);
    Ok((samples, n_train, stack.h, stack.w))
}

fn fresh_forecaster(ctx: &Context, basis: &Basis, h: usize, w: usize) -> CliResult<ForecastModel> {
    let section = &ctx.cfg.config.forecast;
    let config = section.model_config()?;
    Ok(match section.variant {
        ForecastVariant::Convlstm => build_forecaster(&config, ctx.seed())?,
        ForecastVariant::Stdk => {
            let level = basis
                .spatial
                .first()
                .ok_or_else(|| CliError::new(EXIT_SHAPE, "basis has no spatial levels"))?;
            build_stdk_forecaster(&config, rasterize_basis(level, h, w)?, ctx.seed())?
        }
    })
}

fn variant_name(v: ForecastVariant) -> &'static str {
    match v {
        ForecastVariant::Convlstm => "convlstm",
        ForecastVariant::Stdk => "stdk",
    }
}

/// Trains the forecaster on sequences of interpolated median fields.
pub fn train_forecast(ctx: &Context) -> CliResult<()> {
    let (basis, basis_hash) = build_basis(ctx)?;
    let (samples, n_train, h, w) = forecast_samples(ctx)?;
    let model = fresh_forecaster(ctx, &basis, h, w)?;
    log::info!("training forecaster on {n_train} of {} sequences", samples.len());
    let (model, history) = train_model(model, &samples[..n_train], ctx.seed())?;
    let ckpt_hash = save_checkpoint(&ctx.path(FORECAST_CHECKPOINT), &model.params)?;
    write_history(&ctx.path("forecast_history.csv"), &history)?;
    let mut m = ctx.meta("forecast-checkpoint");
    m.set("basis_hash", &basis_hash)
        .set("variant", variant_name(ctx.cfg.config.forecast.variant))
        .set("train_sequences", n_train)
        .set("checkpoint_sha256", ckpt_hash)
        .set("final_loss", history.last().copied().unwrap_or(f64::NAN));
    m.save(&ctx.path(FORECAST_META))?;
    Ok(())
}

/// Forecasts every held-out sequence; writes the (lower, median, upper)
/// stack and the matching target frames.
pub fn forecast(ctx: &Context) -> CliResult<()> {
    let (basis, basis_hash) = build_basis(ctx)?;
    let meta = ctx.load_meta(FORECAST_META, "forecast-checkpoint")?;
    meta.expect("forecast checkpoint", "basis_hash", &basis_hash)?;
    meta.expect("forecast checkpoint", "variant", variant_name(ctx.cfg.config.forecast.variant))?;
    let bytes = read_verified(&ctx.path(FORECAST_CHECKPOINT), &meta, "checkpoint_sha256")?;
    let (samples, n_train, h, w) = forecast_samples(ctx)?;
    let mut model = fresh_forecaster(ctx, &basis, h, w)?;
    model.params.load_blocks(read_checkpoint(bytes.as_slice())?)?;

    let targets = if n_train < samples.len() { &samples[n_train..] } else { &samples[..] };
    let mut pred = Vec::with_capacity(3 * targets.len() * h * w);
    let mut truth = Vec::with_capacity(targets.len() * h * w);
    for s in targets {
        for map in model.predict(&s.inputs)? {
            pred.extend_from_slice(map.data());
        }
        truth.extend_from_slice(s.target.data());
    }
    let section = &ctx.cfg.config.forecast;
    let first_target = targets[0].start + section.n_inputs + section.lead - 1;
    let mut prov = Meta::parse(&ctx.provenance("forecast", &basis_hash))?;
    prov.set("first_target_step", first_target);
    let mut truth_prov = prov.clone();
    prov.set("channels", "lower,median,upper");
    truth_prov.set("kind", "forecast-truth").set("channels", "observed");
    GridStack::new(3, targets.len(), h, w, pred)?
        .with_provenance(prov.to_text())
        .save(ctx.path(FORECAST_STACK))?;
    GridStack::new(1, targets.len(), h, w, truth)?
        .with_provenance(truth_prov.to_text())
        .save(ctx.path(FORECAST_TRUTH_STACK))?;
    log::info!("forecast {} held-out sequences", targets.len());
    Ok(())
}

// ----------------------------------------------------------- evaluation

pub struct EvaluateArgs {
    pub truth: PathBuf,
    pub pred: PathBuf,
    /// Destandardize with this file's parameters before scoring.
    pub standardization: Option<PathBuf>,
    pub out: PathBuf,
}

/// Observed values from a 1-channel stack, or the median of a 3-channel one.
fn truth_values(stack: &GridStack) -> CliResult<Vec<f64>> {
    match stack.channels {
        1 => Ok(stack.data().to_vec()),
        3 => Ok(stack.channel(1)?),
        c => Err(CliError::new(EXIT_SHAPE, format!("truth stack has {c} channels; expected 1 or 3"))),
    }
}

/// Scores a prediction stack against a truth stack of the same T, H, W.
/// A 1-channel prediction is scored as a zero-width interval.
pub fn evaluate_stacks(args: &EvaluateArgs) -> CliResult<EvalReport> {
    let truth = load_stack(&args.truth)?;
    let pred = load_stack(&args.pred)?;
    if (truth.t, truth.h, truth.w) != (pred.t, pred.h, pred.w) {
        return Err(CliError::new(
            EXIT_SHAPE,
            format!(
                "truth is {}x{}x{} but prediction is {}x{}x{}",
                truth.t, truth.h, truth.w, pred.t, pred.h, pred.w
            ),
        ));
    }
    let hash_of = |s: &GridStack| Meta::parse(&s.provenance).ok().and_then(|m| m.get("config_hash").ok().map(str::to_owned));
    if let (Some(a), Some(b)) = (hash_of(&truth), hash_of(&pred)) {
        stdk_core::provenance::verify("prediction stack config_hash", &a, &b)?;
    }
    let y = truth_values(&truth)?;
    let (mut lo, mut mid, mut hi) = match pred.channels {
        1 => (pred.data().to_vec(), pred.data().to_vec(), pred.data().to_vec()),
        3 => (pred.channel(0)?, pred.channel(1)?, pred.channel(2)?),
        c => return Err(CliError::new(EXIT_SHAPE, format!("prediction stack has {c} channels; expected 1 or 3"))),
    };
    let mut y = y;
    if let Some(path) = &args.standardization {
        if !path.is_file() {
            return Err(CliError::missing(path));
        }
        let params = StandardizationParams::from_text(&fs::read_to_string(path)?)?;
        for v in [&mut y, &mut lo, &mut mid, &mut hi] {
            v.iter_mut().for_each(|x| *x = params.destandardize(*x));
        }
    }
    let report = evaluate(&y, &lo, &mid, &hi)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("eval.csv"), report.to_csv())?;
    fs::write(args.out.join("eval.txt"), format!("{report}\n"))?;
    Ok(report)
}

// -------------------------------------------------------------- render

pub struct RenderArgs {
    pub stack: PathBuf,
    pub time: usize,
    pub channel: Option<usize>,
    pub triptych: bool,
    pub palette: Palette,
    pub png: PathBuf,
}

/// Grid rows run south to north; images are drawn north-up.
fn flip_rows<T: Copy>(values: &[T], w: usize) -> Vec<T> {
    values.chunks(w).rev().flatten().copied().collect()
}

/// Heatmap of one frame, or (lower, median, upper) side by side on a shared
/// colour scale.
pub fn render(args: &RenderArgs) -> CliResult<()> {
    let stack = load_stack(&args.stack)?;
    if args.time >= stack.t {
        return Err(CliError::new(
            EXIT_SHAPE,
            format!("time index {} out of range for {} steps", args.time, stack.t),
        ));
    }
    let (w, h) = (stack.w, stack.h);
    let (pixels, width) = if args.triptych {
        if stack.channels != 3 {
            return Err(CliError::new(EXIT_SHAPE, format!("triptych needs 3 channels, stack has {}", stack.channels)));
        }
        let frames: Vec<Vec<f64>> = (0..3)
            .map(|c| Ok(flip_rows(stack.frame(args.time, c)?, w)))
            .collect::<CliResult<_>>()?;
        let (lo, hi) = png::finite_range(frames.iter().flatten()).unwrap_or((0.0, 0.0));
        let colored: Vec<Vec<png::Rgb>> = frames.iter().map(|f| png::colorize(f, lo, hi, args.palette)).collect();
        let mut pixels = Vec::with_capacity(3 * w * h);
        for row in 0..h {
            for panel in &colored {
                pixels.extend_from_slice(&panel[row * w..(row + 1) * w]);
            }
        }
        (pixels, 3 * w)
    } else {
        let channel = args.channel.unwrap_or(if stack.channels == 3 { 1 } else { 0 });
        if channel >= stack.channels {
            return Err(CliError::new(
                EXIT_SHAPE,
                format!("channel {channel} out of range for {} channels", stack.channels),
            ));
        }
        let frame = flip_rows(stack.frame(args.time, channel)?, w);
        let (lo, hi) = png::finite_range(&frame).unwrap_or((0.0, 0.0));
        (png::colorize(&frame, lo, hi, args.palette), w)
    };
    if let Some(dir) = args.png.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&args.png, png::encode_rgb(width, h, &pixels))?;
    Ok(())
}

pub fn missing_config() -> CliError {
    CliError::new(EXIT_MISSING_INPUT, "this command needs --config PATH")
}
