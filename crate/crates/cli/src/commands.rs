use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

use predator_core::classes::{Label, NUM_CLASSES};
use predator_core::events::{
    normalize_histogram, parse_events, write_csv, write_evt1, BackgroundFilter, Event, EventFormat,
    FilterConfig, Frame, FrameKind, HistAccumulator, HistConfig, Polarity, SENSOR_HEIGHT, SENSOR_WIDTH,
};
use predator_core::net::{fit, Architecture, NetError, Network, Sample, TrainConfig};
use predator_core::sim::{
    evaluate_frames, load_dataset, make_dataset, DatasetConfig, Detector, DetectorKind, Episode, EpisodeConfig,
    LabeledFrame, PreyBehavior,
};
use predator_core::steering::{analog_position, digitize, SteeringParams};

use crate::serve::{serve_blocking, ServeOptions};
use crate::Failure;

type Outcome = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "predator", version, about = "Event-camera predator robot pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remove uncorrelated background activity from an event file.
    Filter(FilterArgs),
    /// Accumulate events into fixed-count histogram frames (PGM).
    Hist(HistArgs),
    /// Generate a labeled synthetic dataset with a JSON manifest.
    SynthData(SynthArgs),
    /// Train the network on a dataset manifest.
    Train(TrainArgs),
    /// Run the network on one frame.
    Infer(InferArgs),
    /// Run a headless closed-loop episode.
    Sim(SimArgs),
    /// Run the live simulation behind a WebSocket state/teleop service.
    Serve(ServeArgs),
    /// Measure filter throughput, forward latency and histogram rates.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Evt1,
    Csv,
}

impl From<FormatArg> for EventFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Evt1 => EventFormat::Evt1,
            FormatArg::Csv => EventFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Aps,
    Dvs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Oracle,
    Net,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PreyArg {
    Static,
    Circling,
    Evading,
    Teleop,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Output format; defaults to the input format.
    #[arg(long, value_enum)]
    pub output_format: Option<FormatArg>,
    #[arg(long, default_value_t = 10_000)]
    pub dt_max_us: u64,
    #[arg(long, default_value_t = 1)]
    pub radius: u16,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, default_value_t = 36)]
    pub width: usize,
    #[arg(long, default_value_t = 5000)]
    pub n_target: usize,
    /// Skip the background-activity filter.
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset config (JSON); missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the trained weights.
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out manifest scored after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on one-hot labels instead of position-encoding targets.
    #[arg(long)]
    pub hard_targets: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub frame: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Aps)]
    pub kind: KindArg,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Episode config (JSON); missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorArg>,
    /// Network weights, required with `--detector net`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub prey: Option<PreyArg>,
    /// Prey speed for the circling and evading scripts, m/s.
    #[arg(long)]
    pub prey_speed: Option<f64>,
    /// Per-tick trace CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON; printed to stdout when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorArg>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `default` for a freshly initialized standard network, or a weights file.
    #[arg(long, default_value = "default")]
    pub net: String,
    #[arg(long, default_value_t = 36)]
    pub width: usize,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    /// Events in the synthetic filter-throughput stream.
    #[arg(long, default_value_t = 1_000_000)]
    pub events: usize,
    /// Simulated seconds of the oracle episode used for the rate histogram.
    #[arg(long, default_value_t = 5.0)]
    pub episode_s: f64,
}

pub fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Filter(a) => filter(a),
        Command::Hist(a) => hist(a),
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Sim(a) => sim(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => bench(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::io)
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::io)
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bytes = read(path)?;
    serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::usage)
}

fn guess_format(path: &Path, explicit: Option<FormatArg>) -> EventFormat {
    match explicit {
        Some(f) => f.into(),
        None if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => EventFormat::Csv,
        None => EventFormat::Evt1,
    }
}

fn read_events(path: &Path, format: EventFormat) -> Result<Vec<Event>, Failure> {
    let bytes = read(path)?;
    parse_events(&bytes, format)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::io)
}

fn filter_config(dt_max_us: u64, radius: u16) -> Result<FilterConfig, Failure> {
    if dt_max_us == 0 || radius == 0 {
        return Err(Failure::usage(anyhow!("--dt-max-us and --radius must be positive")));
    }
    Ok(FilterConfig { dt_max_us, radius })
}

fn filter(a: FilterArgs) -> Outcome {
    let format = guess_format(&a.input, a.format);
    let config = filter_config(a.dt_max_us, a.radius)?;
    let events = read_events(&a.input, format)?;
    let mut f = BackgroundFilter::new(config);
    let kept = f.filter_stream(&events);
    let out_format = a.output_format.map(EventFormat::from).unwrap_or(format);
    let bytes = match out_format {
        EventFormat::Evt1 => write_evt1(&kept),
        EventFormat::Csv => write_csv(&kept).into_bytes(),
    };
    write(&a.output, &bytes)?;
    eprintln!("passed {} rejected {}", f.passed(), f.rejected());
    Ok(())
}

fn hist(a: HistArgs) -> Outcome {
    if a.n_target == 0 || a.width == 0 || a.width % 3 != 0 {
        return Err(Failure::usage(anyhow!("--width must be a positive multiple of 3 and --n-target positive")));
    }
    let events = read_events(&a.input, guess_format(&a.input, a.format))?;
    let mut filter = (!a.no_filter).then(|| BackgroundFilter::new(FilterConfig::default()));
    let mut acc = HistAccumulator::new(HistConfig {
        width: a.width,
        n_target: a.n_target,
        ..HistConfig::default()
    });
    fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))
        .map_err(Failure::io)?;
    let mut written = 0usize;
    for e in &events {
        if let Some(f) = &mut filter {
            if f.step(e).is_none() {
                continue;
            }
        }
        if let Some(grid) = acc.accumulate(e) {
            let frame = normalize_histogram(&grid, e.t);
            write(&a.out_dir.join(format!("hist_{written:06}.pgm")), &frame.to_pgm())?;
            written += 1;
        }
    }
    println!("{written} frames ({} events left over)", acc.n_collected());
    Ok(())
}

fn synth_data(a: SynthArgs) -> Outcome {
    let mut config: DatasetConfig = read_json(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let t = Instant::now();
    let dataset = make_dataset(&config, a.n).map_err(Failure::usage)?;
    dataset.write(&a.out).map_err(Failure::io)?;
    let th = dataset.thresholds;
    println!("{} frames in {:.1} s -> {}", dataset.frames.len(), t.elapsed().as_secs_f64(), a.out.display());
    println!("size thresholds at {} px: thr_l {:.3} thr_h {:.3}", th.width, th.thr_l, th.thr_h);
    println!("{}", dataset.balance());
    Ok(())
}

fn load_frames(path: &Path) -> Result<(usize, Vec<LabeledFrame>), Failure> {
    let (manifest, frames) = load_dataset(path).map_err(Failure::io)?;
    if frames.is_empty() {
        return Err(Failure::usage(anyhow!("{} lists no frames", path.display())));
    }
    Ok((manifest.width, frames))
}

fn load_net(path: &Path, width: usize) -> Result<Network, Failure> {
    let text = String::from_utf8(read(path)?)
        .with_context(|| format!("{} is not text", path.display()))
        .map_err(Failure::io)?;
    Network::load_weights(&text, width)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(Failure::io)
}

fn net_failure(e: NetError) -> Failure {
    match e {
        NetError::Divergence(_) => Failure::diverged(e),
        other => Failure::usage(other),
    }
}

fn train(a: TrainArgs) -> Outcome {
    let (width, frames) = load_frames(&a.manifest)?;
    let samples: Vec<Sample> = frames
        .into_iter()
        .map(|f| {
            if a.hard_targets {
                Sample::hard(&f.frame, f.label.index())
            } else {
                f.sample()
            }
        })
        .collect();
    let mut net = match &a.init {
        Some(p) => load_net(p, width)?,
        None => Network::glorot(Architecture::standard(width), a.seed),
    };
    let config = TrainConfig {
        learning_rate: a.lr,
        momentum: a.momentum,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(Failure::usage)?;
    eprintln!("training on {} frames, {} epochs", samples.len(), a.epochs);
    let t = Instant::now();
    let report = fit(&mut net, &samples, config, |s| {
        eprintln!(
            "epoch {}/{} lr {:.4} loss {:.4} ({:.0} s)",
            s.epoch + 1,
            a.epochs,
            s.learning_rate,
            s.mean_loss,
            t.elapsed().as_secs_f64()
        );
    })
    .map_err(net_failure)?;
    write(&a.out, net.save_weights().as_bytes())?;
    println!("{} steps, final loss {:.4}", report.steps, report.epochs.last().map_or(f64::NAN, |e| e.mean_loss));
    if let Some(test) = &a.test {
        let (test_width, test_frames) = load_frames(test)?;
        if test_width != width {
            return Err(Failure::usage(anyhow!("test frames are {test_width} px, training frames {width} px")));
        }
        let r = evaluate_frames(&net, &test_frames).map_err(net_failure)?;
        println!(
            "test: {} frames, accuracy {:.3}, mean bearing error {:.2} deg over {} visible",
            r.frames, r.accuracy, r.mean_abs_bearing_error_deg, r.visible_frames
        );
    }
    Ok(())
}

fn infer(a: InferArgs) -> Outcome {
    let kind = match a.kind {
        KindArg::Aps => FrameKind::Aps,
        KindArg::Dvs => FrameKind::Dvs,
    };
    let frame = Frame::from_pgm(&read(&a.frame)?, kind)
        .with_context(|| format!("reading {}", a.frame.display()))
        .map_err(Failure::io)?;
    let net = load_net(&a.weights, frame.width())?;
    let outputs = net.forward(&frame).map_err(net_failure)?;
    let params = SteeringParams::default();
    let position = analog_position(&outputs, &params);
    let mut out = String::new();
    for i in 0..NUM_CLASSES {
        let label = Label::from_index(i).expect("class index");
        out.push_str(&format!("{:<5} {:.6}\n", label.to_string(), outputs.0[i]));
    }
    out.push_str(&format!("decision {}\n", digitize(&outputs)));
    out.push_str(&format!("alpha {:.3}\n", position.alpha));
    out.push_str(&format!("p_mag {:.3}\n", position.p_mag));
    out.push_str(&format!("valid {}\n", position.valid));
    print!("{out}");
    Ok(())
}

fn episode_config(
    config: Option<&Path>,
    seed: Option<u64>,
    detector: Option<DetectorArg>,
    default_prey: Option<PreyBehavior>,
) -> Result<EpisodeConfig, Failure> {
    let mut c: EpisodeConfig = match config {
        Some(p) => read_json(Some(p))?,
        None => {
            let mut c = EpisodeConfig::default();
            if let Some(prey) = default_prey {
                c.prey = prey;
            }
            c
        }
    };
    if let Some(seed) = seed {
        c.seed = seed;
    }
    if let Some(d) = detector {
        c.detector = match d {
            DetectorArg::Oracle => DetectorKind::Oracle,
            DetectorArg::Net => DetectorKind::Net,
        };
    }
    Ok(c)
}

fn detector(config: &EpisodeConfig, weights: Option<&Path>) -> Result<Detector, Failure> {
    let net = match (config.detector, weights) {
        (DetectorKind::Net, Some(p)) => Some(load_net(p, config.render.width)?),
        (DetectorKind::Net, None) => return Err(Failure::usage(anyhow!("--detector net needs --weights"))),
        (DetectorKind::Oracle, _) => None,
    };
    Detector::from_config(config, net).map_err(Failure::usage)
}

fn sim(a: SimArgs) -> Outcome {
    let mut config = episode_config(a.config.as_deref(), a.seed, a.detector, None)?;
    if let Some(d) = a.duration {
        config.duration_s = d;
    }
    if let Some(p) = a.prey {
        let speed = a.prey_speed;
        config.prey = match p {
            PreyArg::Static => PreyBehavior::Static,
            PreyArg::Circling => PreyBehavior::Circling {
                radius: 1.5,
                speed: speed.unwrap_or(0.5),
            },
            PreyArg::Evading => PreyBehavior::Evading {
                speed: speed.unwrap_or(0.7),
            },
            PreyArg::Teleop => PreyBehavior::Teleop,
        };
    } else if let (Some(s), PreyBehavior::Evading { speed } | PreyBehavior::Circling { speed, .. }) =
        (a.prey_speed, &mut config.prey)
    {
        *speed = s;
    }
    let det = detector(&config, a.weights.as_deref())?;
    let mut episode = Episode::new(config, det).map_err(Failure::usage)?;
    if a.out.is_none() {
        episode = episode.without_rows();
    }
    let trace = episode.run();
    if let Some(out) = &a.out {
        let file = fs::File::create(out)
            .with_context(|| format!("creating {}", out.display()))
            .map_err(Failure::io)?;
        trace
            .write_csv(std::io::BufWriter::new(file))
            .with_context(|| format!("writing {}", out.display()))
            .map_err(Failure::io)?;
    }
    let json = trace.summary_json();
    match &a.summary {
        Some(p) => write(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    let s = &trace.summary;
    eprintln!(
        "seed {} {:.1} s: {} | dvs {} aps {} dropped {} | wall contacts {}",
        s.seed,
        s.duration_s,
        match s.capture_time_s {
            Some(t) => format!("captured at {t:.2} s"),
            None => "no capture".into(),
        },
        s.dvs_frames,
        s.aps_frames,
        s.dropped,
        s.wall_contacts
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Outcome {
    let mut config = episode_config(a.config.as_deref(), a.seed, a.detector, Some(PreyBehavior::Teleop))?;
    if a.config.is_none() {
        config.stop_on_capture = false;
        config.duration_s = 1e9;
    }
    let det = detector(&config, a.weights.as_deref())?;
    // Fail on a bad config before binding the port.
    Episode::new(config.clone(), det.clone()).map_err(Failure::usage)?;
    let addr = format!("{}:{}", a.host, a.port);
    let options = ServeOptions::new(config, det);
    serve_blocking(&addr, options).map_err(Failure::io)
}

/// Uniformly scattered events in time order.
fn random_events(n: usize, rate_eps: f64, seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += -(1.0 - rng.random::<f64>()).ln() / rate_eps * 1e6;
            let p = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
            Event::new(
                t as u64,
                rng.random_range(0..SENSOR_WIDTH),
                rng.random_range(0..SENSOR_HEIGHT),
                p,
            )
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

fn bench(a: BenchArgs) -> Outcome {
    if a.runs == 0 {
        return Err(Failure::usage(anyhow!("--runs must be positive")));
    }
    let mut out = std::io::stdout().lock();
    let mut say = |s: String| {
        let _ = writeln!(out, "{s}");
    };

    let events = random_events(a.events, 1e6, 1);
    let mut f = BackgroundFilter::new(FilterConfig::default());
    let t = Instant::now();
    let kept = f.filter_stream(&events).len();
    let secs = t.elapsed().as_secs_f64();
    say(format!(
        "filter: {} events in {:.3} s = {:.2} Meps ({} passed)",
        events.len(),
        secs,
        events.len() as f64 / secs / 1e6,
        kept
    ));

    let net = if a.net == "default" {
        Network::glorot(Architecture::standard(a.width), 1)
    } else {
        load_net(Path::new(&a.net), a.width)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pixels: Vec<f64> = (0..a.width * a.width).map(|_| rng.random()).collect();
    let frame = Frame::new(a.width, pixels, FrameKind::Aps, 0).map_err(Failure::usage)?;
    for _ in 0..20 {
        net.forward(&frame).map_err(net_failure)?;
    }
    let mut ms: Vec<f64> = (0..a.runs)
        .map(|_| {
            let t = Instant::now();
            let o = net.forward(&frame).expect("checked above");
            std::hint::black_box(o);
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    ms.sort_by(f64::total_cmp);
    let median = percentile(&ms, 0.5);
    say(format!(
        "forward ({} px, {} runs): median {:.3} ms, p90 {:.3} ms, max {:.3} ms [{} 2 ms target]",
        a.width,
        a.runs,
        median,
        percentile(&ms, 0.9),
        ms[ms.len() - 1],
        if median <= 2.0 { "within" } else { "over" }
    ));

    let config = EpisodeConfig {
        duration_s: a.episode_s,
        stop_on_capture: false,
        ..EpisodeConfig::default()
    };
    let det = Detector::from_config(&config, None).map_err(Failure::usage)?;
    let trace = Episode::new(config, det).map_err(Failure::usage)?.without_rows().run();
    let s = &trace.summary;
    say(format!(
        "episode {:.1} s: {} DVS frames ({:.1} Hz mean), {} APS frames, {} dropped",
        s.duration_s, s.dvs_frames, s.mean_dvs_rate_hz, s.aps_frames, s.dropped
    ));
    say("frame rate histogram (Hz bin: DVS APS)".into());
    let h = &s.rate_histogram;
    for i in 0..h.dvs_counts.len() {
        if h.dvs_counts[i] + h.aps_counts[i] > 0 {
            say(format!(
                "  {:>9.2}-{:<9.2} {:>6} {:>6}",
                h.bin_edges_hz[i],
                h.bin_edges_hz[i + 1],
                h.dvs_counts[i],
                h.aps_counts[i]
            ));
        }
    }
    Ok(())
}
