//! `astra`: run the pipeline end to end, or one analysis at a time against
//! an existing run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use serde::Serialize;

use astra_core::analysis::{
    knn_sensitivity, leave_one_axis_out, neighbor_entropy, shuffle_controls, AblationSetup, ShuffleMode,
};
use astra_core::cluster::{bootstrap_stability, gap_statistic, weight_sensitivity, SweepReport};
use astra_core::codebook::{build_codebook, quantize_corpus, Codebook, FeatureFamilies, FeatureMatrix};
use astra_core::corpus::{load_corpus, Corpus};
use astra_core::embed::load_token_embeddings;
use astra_core::export::{
    export_bundle, load_run_config, load_stage, run_pipeline, PipelineConfig, Selection, TopicCount,
};
use astra_core::manifold::{umap_project, Projection};
use astra_core::synthetic::{planted_corpus, SyntheticSpec};
use astra_core::topics::{fit_nmf, label_topics, select_topic_count};

#[derive(Parser)]
#[command(name = "astra", version, about = "Institution profile clustering and topic pipeline")]
struct Cli {
    /// Root seed; overrides the run's configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Feature blocks used for clustering: tfidf, counts or both.
    #[arg(long, global = true)]
    features: Option<FeatureFamilies>,
    /// Corpus file; overrides the configured one.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunDir {
    /// Run directory produced by `astra run`.
    #[arg(long, default_value = "run")]
    run: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Execute (or resume) the whole pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the clustering sweep and print the candidate table.
    Sweep(RunDir),
    /// Gap statistic on the clustering projection.
    Gap {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long, default_value_t = 1)]
        k_min: usize,
        #[arg(long, default_value_t = 15)]
        k_max: usize,
        /// Uniform reference sets.
        #[arg(long, default_value_t = 20)]
        refs: usize,
    },
    /// Bootstrap stability of the selected solution.
    Bootstrap {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long, default_value_t = 100)]
        n_boot: usize,
    },
    /// Win rates under randomly drawn composite weights.
    Sensitivity {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long, default_value_t = 500)]
        samples: usize,
    },
    /// NMF topics over the feature matrix.
    Topics {
        #[command(flatten)]
        dir: RunDir,
        /// `auto` or a fixed topic count.
        #[arg(long, default_value = "auto")]
        k: TopicCount,
        /// Restrict to the members of one selected cluster.
        #[arg(long)]
        subset: Option<i32>,
    },
    /// Neighbor-cluster entropy and its sensitivity to the neighbor count.
    Boundary {
        #[command(flatten)]
        dir: RunDir,
    },
    /// Leave-one-axis-out or shuffle controls.
    Ablate {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long, conflicts_with = "shuffle", required_unless_present = "shuffle")]
        axis: bool,
        /// axis, inter_institution or token
        #[arg(long)]
        shuffle: Option<ShuffleMode>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
    },
    /// Build a codebook or quantize a corpus with an existing one.
    Codebook {
        #[command(subcommand)]
        action: CodebookAction,
    },
    /// Re-project the features to 2 or 4 dimensions.
    Project {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long, value_parser = parse_dims)]
        dims: usize,
    },
    /// Rebuild the bundle from the stage artifacts.
    Export(RunDir),
    /// Write a synthetic corpus, token vectors and a config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 12)]
        per_group: usize,
    },
}

#[derive(Subcommand)]
enum CodebookAction {
    Build {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML config whose `[codebook]` table is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    Apply {
        #[arg(long)]
        codebook: PathBuf,
        /// Vectors for tokens the codebook has not seen.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_dims(s: &str) -> std::result::Result<usize, String> {
    match s {
        "2" => Ok(2),
        "4" => Ok(4),
        _ => Err(format!("dims must be 2 or 4, got `{s}`")),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Shared state of a finished run, with the global overrides applied.
struct RunCtx {
    dir: PathBuf,
    cfg: PipelineConfig,
    families: FeatureFamilies,
}

impl RunCtx {
    fn open(dir: &Path, cli: &Cli) -> Result<Self> {
        let mut cfg = load_run_config(dir).with_context(|| format!("opening run {}", dir.display()))?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        let cfg = cfg.seeded();
        Ok(RunCtx {
            dir: dir.to_path_buf(),
            families: cli.features.unwrap_or(cfg.features),
            cfg,
        })
    }

    fn stage<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        Ok(load_stage(&self.dir, name)?)
    }

    fn corpus(&self) -> Result<Corpus> {
        self.stage("corpus")
    }

    /// The run's features, re-quantized when `--features` asks for a
    /// different family.
    fn features(&self) -> Result<FeatureMatrix> {
        let stored: FeatureMatrix = self.stage("features")?;
        if stored.families == self.families {
            return Ok(stored);
        }
        let codebook: Codebook = self.stage("codebook")?;
        Ok(quantize_corpus(
            &self.corpus()?.token_lists(),
            &codebook,
            self.families,
        )?)
    }

    fn selection(&self) -> Result<Selection> {
        self.stage("select")
    }

    fn projection(&self) -> Result<Projection> {
        self.stage("manifold4d")
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config, out } => {
            let mut cfg = PipelineConfig::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(f) = cli.features {
                cfg.features = f;
            }
            if let Some(c) = &cli.corpus {
                cfg.corpus = c.clone();
            }
            let report = run_pipeline(&cfg, out)?;
            println!("{}", report.summary());
            println!("config hash {}", report.config_hash);
            println!("bundle {}", report.bundle_path.display());
        }
        Command::Sweep(d) => {
            let ctx = RunCtx::open(&d.run, cli)?;
            let report = astra_core::cluster::run_sweep(&ctx.projection()?.coords, &ctx.cfg.sweep)?;
            let table = report.to_table();
            let path = ctx.dir.join("sweep.tsv");
            std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
            print!("{table}");
        }
        Command::Gap {
            dir,
            k_min,
            k_max,
            refs,
        } => {
            let ctx = RunCtx::open(&dir.run, cli)?;
            let points = ctx.projection()?.coords;
            let k_max = (*k_max).min(points.nrows() - 1);
            let gap = gap_statistic(&points, *k_min, k_max, *refs, ctx.cfg.seed)?;
            println!("k\tgap\ts");
            for ((k, g), s) in gap.ks.iter().zip(&gap.gap).zip(&gap.s) {
                println!("{k}\t{g:.4}\t{s:.4}");
            }
            println!("k* = {}", gap.k_star);
            write_json(&ctx.dir.join("gap.json"), &gap)?;
        }
        Command::Bootstrap { dir, n_boot } => {
            let ctx = RunCtx::open(&dir.run, cli)?;
            let sel = ctx.selection()?;
            let r = bootstrap_stability(
                &ctx.projection()?.coords,
                &sel.solution.spec,
                &sel.solution.labels,
                *n_boot,
                ctx.cfg.seed,
            )?;
            println!(
                "ARI {:.3} ± {:.3}, NMI {:.3} ± {:.3} ({} replicates, {} skipped)",
                r.mean_ari, r.std_ari, r.mean_nmi, r.std_nmi, r.replicates, r.skipped
            );
            write_json(&ctx.dir.join("bootstrap.json"), &r)?;
        }
        Command::Sensitivity { dir, samples } => {
            let ctx = RunCtx::open(&dir.run, cli)?;
            let sweep: SweepReport = ctx.stage("sweep")?;
            let r = weight_sensitivity(
                &sweep.candidates,
                &ctx.cfg.sweep.weights,
                *samples,
                (0.05, 0.50),
                ctx.cfg.seed,
            )?;
            for w in r.win_rates.iter().filter(|w| w.wins > 0) {
                println!("{}\tk={}\t{:.1}%", w.algorithm, w.k, 100.0 * w.fraction);
            }
            write_json(&ctx.dir.join("sensitivity.json"), &r)?;
        }
        Command::Topics { dir, k, subset } => {
            let ctx = RunCtx::open(&dir.run, cli)?;
            let features = ctx.features()?;
            let x = match subset {
                None => features.data.clone(),
                Some(c) => {
                    let rows: Vec<usize> = ctx
                        .selection()?
                        .solution
                        .labels
                        .iter()
                        .enumerate()
                        .filter(|(_, l)| *l == c)
                        .map(|(i, _)| i)
                        .collect();
                    if rows.is_empty() {
                        bail!("cluster {c} has no members");
                    }
                    features.data.select(Axis(0), &rows)
                }
            };
            let nmf = ctx.cfg.nmf();
            let k = match k {
                TopicCount::Fixed(k) => *k,
                TopicCount::Auto => {
                    let d = select_topic_count(&x, ctx.cfg.topics.k_min..=ctx.cfg.topics.k_max, &nmf)?;
                    println!("k\terror\tdiversity\tcosine");
                    for r in &d.rows {
                        println!(
                            "{}\t{:.4}\t{:.3}\t{:.4}",
                            r.k, r.reconstruction_error, r.diversity, r.mean_cosine
                        );
                    }
                    if d.fallback {
                        println!("no k met the cosine and diversity thresholds; using the elbow");
                    }
                    d.k_star
                }
            };
            let model = fit_nmf(&x, k, &nmf)?;
            let codebook: Codebook = ctx.stage("codebook")?;
            let labels = label_topics(&model, &features.columns, &codebook, None, 5)?;
            for l in &labels {
                println!("topic {}: {}", l.topic, l.text());
            }
            let name = subset.map_or_else(|| "topics.json".to_string(), |c| format!("topics_cluster{c}.json"));
            write_json(
                &ctx.dir.join(name),
                &serde_json::json!({ "model": model, "labels": labels }),
            )?;
        }
        Command::Boundary { dir } => {
            let ctx = RunCtx::open(&dir.run, cli)?;
            let features = ctx.features()?.data;
            let labels = ctx.selection()?.solution.labels;
            let k_nn = ctx.cfg.analysis.k_nn.min(features.nrows() - 1);
            let report = neighbor_entropy(&features, &labels, k_nn)?;
            let sens = knn_sensitivity(&features, &labels, &ctx.cfg.analysis.k_set)?;
            let corpus = ctx.corpus()?;
            let mut tsv = String::from("id\tentropy\tclusters\tboundary\n");
            for e in &report.entries {
                tsv.push_str(&format!(
                    "{}\t{:.4}\t{}\t{}\n",
                    corpus.institutions[e.index].id, e.entropy, e.distinct_clusters, e.boundary
                ));
            }
            let path = ctx.dir.join("boundary.tsv");
            std::fs::write(&path, tsv).with_context(|| format!("writing {}", path.display()))?;
            println!("{} boundary institutions at k={k_nn}", report.boundary_set().len());
            for (k, set) in sens.ks.iter().zip(&sens.boundary_sets) {
                println!("k={k}: {} flagged", set.len());
            }
            write_json(
                &ctx.dir.join("boundary.json"),
                &serde_json::json!({ "report": report, "sensitivity": sens }),
            )?;
        }
        Command::Ablate {
            dir,
            axis,
            shuffle,
            reps,
        } => {
            let ctx = RunCtx::open(&dir.run, cli)?;
            let corpus = ctx.corpus()?;
            let codebook: Codebook = ctx.stage("codebook")?;
            let lists = corpus.token_lists();
            let setup = AblationSetup {
                token_lists: &lists,
                codebook: &codebook,
                families: ctx.families,
                manifold: ctx.cfg.manifold.clone(),
                cluster: ctx.selection()?.solution.spec,
            };
            if *axis {
                let r = leave_one_axis_out(&setup)?;
                println!("baseline silhouette {:.4}", r.baseline.silhouette);
                for a in &r.axes {
                    println!(
                        "{}\tΔsil {:+.4}\tΔCH {:+.2}",
                        a.axis.key(),
                        a.delta_silhouette,
                        a.delta_calinski_harabasz
                    );
                }
                write_json(&ctx.dir.join("ablate_axis.json"), &r)?;
            } else if let Some(mode) = shuffle {
                let r = shuffle_controls(&setup, *mode, *reps, ctx.cfg.seed)?;
                println!(
                    "{mode}: silhouette {:.4} -> {:.4}, t = {:.2}, p = {:.3e}",
                    r.baseline_mean, r.shuffled_mean, r.test.t_statistic, r.test.p_value
                );
                write_json(&ctx.dir.join(format!("ablate_shuffle_{}.json", mode.key())), &r)?;
            }
        }
        Command::Codebook { action } => codebook(cli, action)?,
        Command::Project { dir, dims } => {
            let ctx = RunCtx::open(&dir.run, cli)?;
            let features = ctx.features()?;
            let cfg = if *dims == 2 {
                ctx.cfg.display_manifold()
            } else {
                ctx.cfg.manifold.clone()
            };
            let proj = umap_project(&features.data, &cfg)?;
            write_json(&ctx.dir.join(format!("projection_{dims}d.json")), &proj)?;
        }
        Command::Export(d) => {
            let bundle = export_bundle(&d.run)?;
            println!(
                "{} institutions, {} clusters, {} topics",
                bundle.institutions.len(),
                bundle.clusters.len(),
                bundle.topics.len()
            );
        }
        Command::Synth { out, groups, per_group } => {
            let spec = SyntheticSpec {
                groups: *groups,
                per_group: *per_group,
                seed: cli.seed.unwrap_or(SyntheticSpec::default().seed),
                ..Default::default()
            };
            let s = planted_corpus(&spec)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("corpus.json"), s.corpus.to_json()?)?;
            s.table.save(out.join("tokens.vec"))?;
            let cfg = PipelineConfig {
                seed: spec.seed,
                corpus: "corpus.json".into(),
                embeddings: Some("tokens.vec".into()),
                features: cli.features.unwrap_or_default(),
                ..Default::default()
            };
            std::fs::write(out.join("astra.toml"), cfg.to_toml()?)?;
            println!("wrote {} institutions to {}", s.corpus.len(), out.display());
        }
    }
    Ok(())
}

fn codebook(cli: &Cli, action: &CodebookAction) -> Result<()> {
    let Some(corpus_path) = &cli.corpus else {
        bail!("--corpus is required for codebook commands");
    };
    let corpus = load_corpus(corpus_path)?;
    match action {
        CodebookAction::Build {
            embeddings,
            out,
            config,
        } => {
            let mut cfg = match config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let table = load_token_embeddings(embeddings)?;
            let cb = build_codebook(&table, &corpus.vocabulary(), &cfg.seeded().codebook)?;
            cb.save(out)?;
            println!(
                "{} codewords, {:.1}% variance retained, wrote {}",
                cb.k(),
                100.0 * cb.retained_variance(),
                out.display()
            );
        }
        CodebookAction::Apply {
            codebook,
            embeddings,
            out,
        } => {
            let mut cb = Codebook::load(codebook)?;
            if let Some(p) = embeddings {
                let added = cb.apply(&load_token_embeddings(p)?, &corpus.vocabulary());
                println!("{added} new tokens assigned");
            }
            let features = quantize_corpus(&corpus.token_lists(), &cb, cli.features.unwrap_or_default())?;
            write_json(out, &features)?;
        }
    }
    Ok(())
}
