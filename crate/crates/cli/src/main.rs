use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use linkgpt::config::PipelineConfig;
use linkgpt::corpus::{read_corpus, write_corpus, CorpusMeta, Trajectory};
use linkgpt::error::{Error, Result};
use linkgpt::nn::HeadKind;
use linkgpt::pipeline::{self, Prepared};
use linkgpt::pretrain::trace_to_csv;
use linkgpt::rltf::{ppo_trace_csv, read_pairs, reward_trace_csv, write_pairs};
use linkgpt::roadnet::RoadNetwork;

#[derive(Parser, Debug)]
#[command(name = "linkgpt", version, about = "Synthetic road-link trajectory generation")]
struct Cli {
    /// Pipeline config file (TOML). Missing sections take default values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel generation.
    #[arg(long, global = true, env = "LINKGPT_THREADS", default_value_t = 1)]
    threads: usize,
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "LINKGPT_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Data {
    #[arg(long)]
    network: PathBuf,
    /// Full corpus; the train/held-out split is derived from the master seed.
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Rltf,
    Sft,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the synthetic grid world and simulate a corpus.
    SynthWorld,
    /// Pretrain the policy on the training split.
    Pretrain {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Sample training trajectories uniformly.
        #[arg(long)]
        no_gravity: bool,
        /// Train without the connectivity mask.
        #[arg(long)]
        no_rcm: bool,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate completion pairs and label them by trip-length match.
    BuildPrefs {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the reward model on preference pairs.
    TrainReward {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        prefs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune the policy against the reward model or on preferred completions.
    Finetune {
        #[command(flatten)]
        data: Data,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        policy: PathBuf,
        /// Reward checkpoint (rltf mode).
        #[arg(long)]
        reward: Option<PathBuf>,
        /// Preference pairs (sft mode).
        #[arg(long)]
        prefs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample trajectories from a checkpoint.
    Generate {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Emit one corpus per temperature in the config's sweep list.
        #[arg(long)]
        temperature_sweep: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a synthetic corpus with the held-out split.
    Evaluate {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        syn: PathBuf,
        /// Reference corpus; defaults to the held-out split.
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        with_baselines: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn prepare(cfg: &PipelineConfig, data: &Data) -> Result<Prepared> {
    let net = RoadNetwork::load(&data.network)?;
    let corpus = read_corpus(&data.corpus, Some(&net))?.trajectories;
    Prepared::new(cfg, net, &corpus)
}

fn save_corpus(path: &Path, corpus: &[Trajectory], meta: CorpusMeta) -> Result<()> {
    ensure_parent(path)?;
    write_corpus(path, corpus, &meta)?;
    log::info!("wrote {} trajectories to {}", corpus.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    linkgpt::set_threads(cli.threads)?;
    let mut cfg = load_config(&cli)?;
    let out_dir = cli.out_dir.clone();
    let or_default = |p: Option<PathBuf>, name: &str| p.unwrap_or_else(|| out_dir.join(name));
    match cli.command {
        Command::SynthWorld => {
            cfg.validate()?;
            let prov = cfg.provenance();
            let (net, corpus) = pipeline::synth_world(&cfg)?;
            let net_path = out_dir.join("network.txt");
            ensure_parent(&net_path)?;
            net.save(&net_path, Some(&prov))?;
            let meta = CorpusMeta::new(&net, corpus.len(), Some(prov)).with("source", "synthetic world");
            save_corpus(&out_dir.join("corpus.txt"), &corpus, meta)?;
        }
        Command::Pretrain { data, out, resume, no_gravity, no_rcm, steps } => {
            if no_gravity {
                cfg.pretrain.gravity_sampling = false;
            }
            if no_rcm {
                cfg.pretrain.rcm_masking = false;
            }
            if let Some(s) = steps {
                cfg.pretrain.steps = s;
            }
            let prep = prepare(&cfg, &data)?;
            let prov = cfg.provenance();
            let mut state = match resume {
                Some(p) => pipeline::resume_state(pipeline::load_model(&p, &cfg, &prep, HeadKind::Lm)?)?,
                None => pipeline::fresh_state(&cfg, &prep)?,
            };
            let trace = pipeline::pretrain(&cfg, &prep, &mut state)?;
            let out = or_default(out, "pretrain.ckpt");
            ensure_parent(&out)?;
            pipeline::save_model(&out, &state.model, Some(&state), prov.clone(), "pretrain")?;
            write(&out.with_extension("loss.csv"), &trace_to_csv(&trace, &prov.comment_lines()))?;
            let meta = CorpusMeta::new(&prep.network, prep.heldout.len(), Some(prov)).with("split", "heldout");
            save_corpus(&out.with_extension("heldout.txt"), &prep.heldout, meta)?;
        }
        Command::BuildPrefs { data, policy, out } => {
            let prep = prepare(&cfg, &data)?;
            let model = pipeline::load_model(&policy, &cfg, &prep, HeadKind::Lm)?.model;
            let (pairs, stats) = pipeline::preference_pairs(&cfg, &prep, &model)?;
            let out = or_default(out, "prefs.jsonl");
            ensure_parent(&out)?;
            write_pairs(&out, &pairs, &stats, Some(cfg.provenance()))?;
            log::info!("wrote {} pairs ({} attempts, {} ties)", pairs.len(), stats.attempts, stats.ties);
        }
        Command::TrainReward { data, policy, prefs, out } => {
            let prep = prepare(&cfg, &data)?;
            let model = pipeline::load_model(&policy, &cfg, &prep, HeadKind::Lm)?.model;
            let pairs = read_pairs(&prefs)?;
            let outcome = pipeline::reward_model(&cfg, &prep, &model, &pairs)?;
            let prov = cfg.provenance();
            let out = or_default(out, "reward.ckpt");
            ensure_parent(&out)?;
            pipeline::save_model(&out, &outcome.model, None, prov.clone(), "reward")?;
            write(&out.with_extension("trace.csv"), &reward_trace_csv(&outcome.trace, &prov.comment_lines()))?;
            log::info!("validation pairwise accuracy {:.3} on {} pairs", outcome.val_accuracy, outcome.val_pairs);
        }
        Command::Finetune { data, mode, policy, reward, prefs, out } => {
            let prep = prepare(&cfg, &data)?;
            let base = pipeline::load_model(&policy, &cfg, &prep, HeadKind::Lm)?.model;
            let prov = cfg.provenance();
            match mode {
                Mode::Rltf => {
                    let reward = reward.ok_or_else(|| Error::config("reward", "rltf mode needs --reward"))?;
                    let u = pipeline::load_model(&reward, &cfg, &prep, HeadKind::Score)?.model;
                    let (tuned, trace) = pipeline::finetune_rltf(&cfg, &prep, &base, &u)?;
                    let out = or_default(out, "rltf.ckpt");
                    ensure_parent(&out)?;
                    pipeline::save_model(&out, &tuned, None, prov.clone(), "rltf")?;
                    write(&out.with_extension("trace.csv"), &ppo_trace_csv(&trace, &prov.comment_lines()))?;
                }
                Mode::Sft => {
                    let prefs = prefs.ok_or_else(|| Error::config("prefs", "sft mode needs --prefs"))?;
                    let pairs = read_pairs(&prefs)?;
                    let (tuned, losses) = pipeline::finetune_sft(&cfg, &prep, &base, &pairs)?;
                    let out = or_default(out, "sft.ckpt");
                    ensure_parent(&out)?;
                    pipeline::save_model(&out, &tuned, None, prov.clone(), "sft")?;
                    let mut csv = prov.comment_lines() + "step,train_loss\n";
                    for (i, l) in losses.iter().enumerate() {
                        csv.push_str(&format!("{},{}\n", i + 1, l));
                    }
                    write(&out.with_extension("loss.csv"), &csv)?;
                }
            }
        }
        Command::Generate { data, checkpoint, n, temperature, temperature_sweep, out } => {
            if let Some(t) = temperature {
                cfg.generate.temperature = t;
            }
            if let Some(n) = n {
                cfg.generate.num_trajectories = n;
            }
            let prep = prepare(&cfg, &data)?;
            let ck = pipeline::load_model(&checkpoint, &cfg, &prep, HeadKind::Lm)?;
            let temps = if temperature_sweep { cfg.generate.sweep.clone() } else { vec![cfg.generate.temperature] };
            let out = or_default(out, "generated.txt");
            for t in temps {
                let g = pipeline::generate(&cfg, &prep, &ck.model, cfg.generate.num_trajectories, t, cfg.seed)?;
                let path = if temperature_sweep {
                    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("generated");
                    out.with_file_name(format!("{stem}_t{t}.txt"))
                } else {
                    out.clone()
                };
                let meta = CorpusMeta::new(&prep.network, g.trajectories.len(), Some(cfg.provenance()))
                    .with("temperature", t)
                    .with("generation_seed", cfg.seed)
                    .with("checkpoint_hash", ck.content_hash())
                    .with("retries", g.retries)
                    .with("shortfall", g.shortfall)
                    .with("windowed", g.windowed);
                save_corpus(&path, &g.trajectories, meta)?;
            }
        }
        Command::Evaluate { data, syn, real, with_baselines, out } => {
            let mut prep = prepare(&cfg, &data)?;
            if let Some(r) = real {
                prep.heldout = read_corpus(&r, Some(&prep.network))?.trajectories;
            }
            let syn = read_corpus(&syn, Some(&prep.network))?.trajectories;
            let res = pipeline::evaluate(&cfg, &prep, &syn, with_baselines, Some(cfg.provenance()))?;
            let out = or_default(out, "report.json");
            write(&out, &res.report.to_json())?;
            write(&out.with_extension("plot.csv"), &res.plot_csv)?;
            let m = &res.report.model;
            log::info!(
                "qe {:.4} od {:.4} trip {:.4} radius {:.4} gravity {:.4} connectivity {:.4}",
                m.query_error,
                m.jsd_od,
                m.jsd_trip_length,
                m.jsd_radius,
                m.jsd_gravity,
                m.connectivity
            );
        }
    }
    Ok(())
}
