//! `quiltrt`: converts 2D frames to a native light-field stream.
//!
//! Exit codes: 0 clean run, 1 other failure, 2 bad arguments or
//! configuration, 3 map/model/calibration failure, 4 source or sink failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use quiltrt_core::iohub::{
    config_from_entries, config_to_entries, generate_map, parse_ini_entries, to_ini, Entries,
    HeadlessScreens, IoError, MapGenError, RegionSpec, ScreenProvider, SinkSpec, SourceSpec,
    VirtualDesktop,
};
use quiltrt_core::lut::{LutError, MapHeader, QuiltGeometry};
use quiltrt_core::pipeline::{self, DEFAULT_GEOMETRY, PipelineConfig, PipelineError, RunHandle, Stage};

use serde_json::json;

#[derive(Parser)]
#[command(name = "quiltrt", version, about = "Real-time 2D to light-field conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a file, pipe or synthetic source and print the final stats.
    Rt(RunArgs),
    /// Convert a screen region.
    LiveCli(LiveArgs),
    /// Build a MAP file from a calibration document.
    Lutgen(LutgenArgs),
    /// Serve the localhost control API.
    Serve(ServeArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// INI configuration; flags override its keys.
    #[arg(long)]
    ini: Option<PathBuf>,
    /// MAP file.
    #[arg(long, conflicts_with = "calibration")]
    map: Option<PathBuf>,
    /// Calibration document; the map is built at start.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Quilt grid as ROWSxCOLS.
    #[arg(long, value_parser = parse_pair::<u16>)]
    quilt: Option<(u16, u16)>,
    /// Tile size as WxH.
    #[arg(long, value_parser = parse_pair::<u32>)]
    tile: Option<(u32, u32)>,
    /// Source descriptor, e.g. `file:DIR`, `pipe:-`, `moving-gradient 640x480@30*100`.
    #[arg(long)]
    input: Option<String>,
    /// Sink descriptor: `file:DIR`, `pipe:-`, `tcp:PORT`, `window:N` or `null`.
    #[arg(long)]
    output: Option<String>,
    /// Subsampling factor of frames fed to the depth estimator.
    #[arg(long)]
    decimation: Option<u32>,
    #[arg(long)]
    fps: Option<f64>,
    /// Stop after this many seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// ONNX depth network.
    #[arg(long)]
    model: Option<PathBuf>,
    /// `cpu`, `accel` or `accel_fp16`.
    #[arg(long)]
    provider: Option<String>,
    /// `fast` or `geometric`.
    #[arg(long)]
    algorithm: Option<String>,
    /// Synthetic depth pattern used without a model.
    #[arg(long)]
    depth: Option<String>,
    /// Weight of the previous depth map; 0 disables smoothing.
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    zero_parallax: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Assemble the quilt and map it, instead of gathering directly from the views.
    #[arg(long)]
    via_quilt: bool,
}

#[derive(Args)]
struct LiveArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Capture region as `SCREEN:X,Y,WxH`.
    #[arg(long)]
    region: Option<String>,
    /// Show the output on this display.
    #[arg(long)]
    display: Option<u32>,
    /// Emulated screens as `WxH[,WxH...]`, for hosts without capture.
    #[arg(long)]
    virtual_screens: Option<String>,
}

#[derive(Args)]
struct LutgenArgs {
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long, value_parser = parse_pair::<u16>)]
    quilt: Option<(u16, u16)>,
    #[arg(long, value_parser = parse_pair::<u32>)]
    tile: Option<(u32, u32)>,
    #[arg(long)]
    output: PathBuf,
    /// Overwrite an existing output.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = quiltrt_control::DEFAULT_PORT)]
    port: u16,
    /// INI configuration loaded at start.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the configuration back to `--config` on exit.
    #[arg(long, requires = "config")]
    save_on_exit: bool,
    #[arg(long)]
    virtual_screens: Option<String>,
}

/// An error with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::new(2, anyhow::anyhow!("{msg}"))
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected AxB, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("bad number `{v}` in `{s}`"));
    Ok((p(a)?, p(b)?))
}

fn parse_screens(s: &str) -> Result<Vec<(u32, u32)>, String> {
    s.split(',').map(|p| parse_pair::<u32>(p.trim())).collect()
}

fn screens_from(arg: Option<&str>) -> Result<Arc<dyn ScreenProvider>, Failure> {
    Ok(match arg {
        Some(s) => Arc::new(VirtualDesktop::new(parse_screens(s).map_err(usage)?)),
        None => Arc::new(HeadlessScreens),
    })
}

fn read_entries(ini: Option<&Path>) -> Result<Entries, Failure> {
    let Some(path) = ini else {
        return Ok(Entries::new());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| Failure::new(2, e))?;
    parse_ini_entries(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Replaces every `prefix` entry with those describing `c`'s matching part.
fn replace_section(entries: &mut Entries, prefix: &str, c: &PipelineConfig) {
    entries.retain(|k, _| !k.starts_with(prefix));
    entries.extend(config_to_entries(c).into_iter().filter(|(k, _)| k.starts_with(prefix)));
}

fn apply_flags(entries: &mut Entries, a: &RunArgs) -> Result<(), Failure> {
    if let Some(s) = &a.input {
        let source: SourceSpec = s.parse().map_err(usage)?;
        replace_section(entries, "input.", &PipelineConfig { source, ..Default::default() });
    }
    if let Some(s) = &a.output {
        let sink: SinkSpec = s.parse().map_err(usage)?;
        replace_section(entries, "output.", &PipelineConfig { sink, ..Default::default() });
    }
    if a.map.is_some() || a.calibration.is_some() {
        entries.remove("processing.map");
        entries.remove("processing.calibration");
    }
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            entries.insert(k.to_owned(), v);
        }
    };
    set("processing.map", path(&a.map));
    set("processing.calibration", path(&a.calibration));
    set("processing.quilt_rows", a.quilt.map(|q| q.0.to_string()));
    set("processing.quilt_cols", a.quilt.map(|q| q.1.to_string()));
    set("processing.tile_w", a.tile.map(|t| t.0.to_string()));
    set("processing.tile_h", a.tile.map(|t| t.1.to_string()));
    set("processing.decimation", a.decimation.map(|v| v.to_string()));
    set("processing.fps", a.fps.map(|v| v.to_string()));
    set("processing.duration_s", a.duration.map(|v| v.to_string()));
    set("processing.model", path(&a.model));
    set("processing.provider", a.provider.clone());
    set("processing.algorithm", a.algorithm.clone());
    set("processing.depth", a.depth.clone());
    set("processing.alpha", a.alpha.map(|v| v.to_string()));
    set("processing.gain", a.gain.map(|v| v.to_string()));
    set("processing.zero_parallax", a.zero_parallax.map(|v| v.to_string()));
    set("processing.workers", a.workers.map(|v| v.to_string()));
    if a.via_quilt {
        set("processing.direct", Some("false".into()));
    }
    Ok(())
}

/// A grid or tile given alone takes the rest of the geometry from the MAP header.
fn complete_geometry(entries: &mut Entries) -> Result<(), Failure> {
    const KEYS: [&str; 4] = [
        "processing.quilt_rows",
        "processing.quilt_cols",
        "processing.tile_w",
        "processing.tile_h",
    ];
    let given = KEYS.iter().filter(|k| entries.contains_key(**k)).count();
    let Some(map) = entries.get("processing.map").cloned() else {
        return Ok(());
    };
    if given == 0 {
        return Ok(());
    }
    let h = MapHeader::read(&map).map_err(|e| Failure::new(3, anyhow::anyhow!("cannot load map: {map}: {e}")))?;
    let g = h.geometry;
    let values = [g.rows as u32, g.cols as u32, g.tile_w, g.tile_h];
    for (k, v) in KEYS.iter().zip(values) {
        let have = entries.entry((*k).to_owned()).or_insert_with(|| v.to_string());
        // A geometry that disagrees with the map header is a usage error.
        if have.trim().parse::<u32>().ok() != Some(v) {
            return Err(usage(anyhow::anyhow!("{k} = {have} does not match the map header ({g})")));
        }
    }
    Ok(())
}

fn build_config(mut entries: Entries) -> Result<PipelineConfig, Failure> {
    complete_geometry(&mut entries)?;
    let (config, warnings) = config_from_entries(&entries).map_err(usage)?;
    for w in warnings {
        log::warn!("{w}");
    }
    if config.map.is_none() {
        return Err(usage(
            "a map is required: pass --map FILE or --calibration FILE (or set processing.map)\n\n\
             usage: quiltrt rt --map FILE [--quilt RxC] [--ini FILE] [--input DESC] [--output DESC]",
        ));
    }
    Ok(config)
}

fn start_failure(e: PipelineError) -> Failure {
    let code = match &e {
        PipelineError::InvalidConfig { .. } => 2,
        PipelineError::MapLoadFailure(_) | PipelineError::ModelLoadFailure(_) => 3,
        PipelineError::SourceOpenFailure(_) | PipelineError::SinkOpenFailure(_) => 4,
        PipelineError::AlreadyRunning => 1,
    };
    Failure::new(code, e)
}

/// Stops the run on Ctrl-C.
fn stop_on_interrupt(handle: RunHandle) {
    std::thread::spawn(move || {
        let rt = match tokio::runtime::Builder::new_current_thread().enable_all().build() {
            Ok(rt) => rt,
            Err(_) => return,
        };
        if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
            log::info!("interrupted; stopping");
            handle.stop();
        }
    });
}

fn run(config: PipelineConfig, screens: Arc<dyn ScreenProvider>) -> Result<(), Failure> {
    let handle = pipeline::start_with_screens(config.clone(), screens).map_err(start_failure)?;
    stop_on_interrupt(handle.clone());
    let stats = handle.wait();
    let failure = handle.failure();
    let (nw, nh) = handle.native_dims();
    let report = json!({
        "geometry": handle.geometry().to_string(),
        "native": {"width": nw, "height": nh},
        "stats": stats,
        "failure": failure.as_ref().map(|f| json!({"stage": f.stage, "message": f.message})),
    });
    let report = serde_json::to_string_pretty(&report).expect("serializable report");
    // Frames own stdout when the sink is `pipe:-`.
    if matches!(config.sink, SinkSpec::RawPipe { path: None }) {
        eprintln!("{report}");
    } else {
        println!("{report}");
    }
    match failure {
        None => Ok(()),
        Some(f) => {
            let code = match f.stage {
                Stage::Capture | Stage::Sink => 4,
                _ => 1,
            };
            Err(Failure::new(code, anyhow::anyhow!("{} stage failed: {}", f.stage.name(), f.message)))
        }
    }
}

fn cmd_rt(a: &RunArgs) -> Result<(), Failure> {
    let mut entries = read_entries(a.ini.as_deref())?;
    apply_flags(&mut entries, a)?;
    let config = build_config(entries)?;
    run(config, Arc::new(HeadlessScreens))
}

fn cmd_live(a: &LiveArgs) -> Result<(), Failure> {
    let mut entries = read_entries(a.run.ini.as_deref())?;
    apply_flags(&mut entries, &a.run)?;
    if let Some(r) = &a.region {
        let source: SourceSpec = format!("screen:{r}").parse().map_err(usage)?;
        replace_section(&mut entries, "input.", &PipelineConfig { source, ..Default::default() });
    }
    if let Some(d) = a.display {
        let sink = SinkSpec::Window { display_index: d };
        replace_section(&mut entries, "output.", &PipelineConfig { sink, ..Default::default() });
    }
    if !entries.contains_key("input.type") {
        let source = SourceSpec::ScreenRegion(RegionSpec::default());
        replace_section(&mut entries, "input.", &PipelineConfig { source, ..Default::default() });
    }
    let config = build_config(entries)?;
    let SourceSpec::ScreenRegion(region) = &config.source else {
        return Err(usage("live-cli captures a screen region; set --region or input.type = screen"));
    };
    let screens = screens_from(a.virtual_screens.as_deref())?;
    match screens.check_region(region) {
        Ok(_) => {}
        Err(e @ IoError::InvalidRegion(_)) => return Err(usage(e)),
        Err(e) => return Err(Failure::new(4, anyhow::anyhow!("cannot open source: {e}"))),
    }
    run(config, screens)
}

fn cmd_lutgen(a: &LutgenArgs) -> Result<(), Failure> {
    let (rows, cols) = a.quilt.unwrap_or((DEFAULT_GEOMETRY.rows, DEFAULT_GEOMETRY.cols));
    let (tile_w, tile_h) = a.tile.unwrap_or((DEFAULT_GEOMETRY.tile_w, DEFAULT_GEOMETRY.tile_h));
    let geometry = QuiltGeometry {
        rows,
        cols,
        tile_w,
        tile_h,
    };
    let text = std::fs::read_to_string(&a.calibration)
        .with_context(|| format!("reading {}", a.calibration.display()))
        .map_err(|e| Failure::new(3, e))?;
    let header = generate_map(&text, &geometry, &a.output, a.force).map_err(|e| match e {
        MapGenError::OutputExists(_) => usage(format!("{e}; pass --force to overwrite")),
        MapGenError::Lut(LutError::InvalidGeometry(_)) => usage(e),
        MapGenError::Calibration(_) => Failure::new(3, e),
        MapGenError::Lut(_) => Failure::new(1, e),
    })?;
    println!("{}: {header}", a.output.display());
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<(), Failure> {
    let config = match &a.config {
        Some(p) => {
            let entries = read_entries(Some(p))?;
            let (c, warnings) = config_from_entries(&entries).map_err(usage)?;
            for w in warnings {
                log::warn!("{w}");
            }
            c
        }
        None => PipelineConfig::default(),
    };
    let screens = screens_from(a.virtual_screens.as_deref())?;
    let service = Arc::new(quiltrt_control::Service::new(config, screens));
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    let svc = service.clone();
    rt.block_on(async move {
        tokio::select! {
            r = quiltrt_control::serve(svc, a.port) => r.map_err(|e| Failure::new(4, anyhow::anyhow!("port {}: {e}", a.port))),
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })?;
    if service.handle().is_some_and(|h| !h.is_finished()) {
        let _ = service.stop();
    }
    if let (true, Some(p)) = (a.save_on_exit, &a.config) {
        std::fs::write(p, to_ini(&service.config())).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Rt(a) => cmd_rt(a),
        Command::LiveCli(a) => cmd_live(a),
        Command::Lutgen(a) => cmd_lutgen(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use quiltrt_core::pipeline::MapSource;

    #[test]
    fn pairs() {
        assert_eq!(parse_pair::<u16>("6x8"), Ok((6, 8)));
        assert_eq!(parse_pair::<u32>("420X560"), Ok((420, 560)));
        assert!(parse_pair::<u16>("6").is_err());
        assert!(parse_pair::<u16>("6xq").is_err());
        assert_eq!(parse_screens("1920x1080, 800x600"), Ok(vec![(1920, 1080), (800, 600)]));
    }

    #[test]
    fn flags_override_ini_sections() {
        let mut e = parse_ini_entries("[input]\ntype = file\npath = seq\n[processing]\nmap = a.map\nfps = 5\n").unwrap();
        let a = RunArgs {
            input: Some("moving-gradient 32x16*3".into()),
            calibration: Some("c.json".into()),
            fps: Some(12.0),
            ..Default::default()
        };
        apply_flags(&mut e, &a).unwrap();
        assert!(!e.contains_key("input.path"));
        assert!(!e.contains_key("processing.map"));
        assert_eq!(e["processing.fps"], "12");
        let c = build_config(e).unwrap();
        assert_eq!(c.map, Some(MapSource::Calibration("c.json".into())));
        assert_eq!(
            c.source,
            SourceSpec::Synthetic {
                width: 32,
                height: 16,
                fps: None,
                frames: Some(3)
            }
        );
    }

    #[test]
    fn missing_map_is_a_usage_error() {
        let mut e = Entries::new();
        apply_flags(&mut e, &RunArgs { input: Some("moving-gradient 32x16".into()), ..Default::default() }).ok();
        assert_eq!(build_config(e).err().map(|f| f.code), Some(2));
    }
}
