//! One function per CLI command. Each reads its upstream artifacts from the
//! experiment directory and writes its own under fixed names.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bpgnn::analysis::{manifold_report, message_grid, proxy_projection, update_grid, CloudSummary, GraphRecord, GridTable};
use bpgnn::bp::{generate_traces, sample_stable_pgm, Split, TraceDataset};
use bpgnn::gnn::{pairs, rollout, Connectivity, RolloutResult};
use bpgnn::pgm::GaussianPgm;
use bpgnn::rng;
use bpgnn::search::{hidden_label, run_search};
use bpgnn::train::{predict_trials, train_multi, LogRecord};
use bpgnn::translator::{
    construct_gnn, evaluate_generalization, recover_precision_matrix, regressor_r2, support_f1, Direction, GraphSample,
    GraphTranslator, TranslatorSplit,
};
use ndarray::Axis;

use crate::artifacts::*;
use crate::config::{ExperimentConfig, Stage};

pub const ENSEMBLE: &str = "ensemble.ckpt";
pub const COLORLESS: &str = "colorless.ckpt";
pub const TRANSLATOR: &str = "translator.ckpt";
pub const CONSTRUCTED: &str = "constructed.ckpt";
pub const REPORT: &str = "report.csv";
pub const SEARCH: &str = "search.csv";
/// Draws per model before giving up on finding one BP stays stable on.
const MAX_DRAWS: usize = 100;

/// A loaded configuration plus whether hash mismatches are tolerated.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub force: bool,
}

fn f(v: f64) -> String {
    v.to_string()
}

impl Experiment {
    pub fn new(config: ExperimentConfig, force: bool) -> Self {
        Self { config, force }
    }

    pub fn dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir().join(name)
    }

    fn hash(&self, stage: Stage) -> String {
        self.config.stage_hash(stage)
    }

    fn say(&self, msg: impl AsRef<str>) {
        eprintln!("{}", msg.as_ref());
    }

    pub fn gen_pgm(&self) -> Result<()> {
        let c = &self.config;
        let mut rejected = 0;
        for g in 0..c.pgm.count {
            let seed = rng::indexed(c.seed, "pgm", g as u64);
            let (pgm, r) = sample_stable_pgm(&c.pgm.spec(g), &c.bp, c.schedule.duration, seed, MAX_DRAWS)
                .with_context(|| format!("generating model {g}"))?;
            rejected += r;
            save_pgm(&pgm_path(self.dir(), g), g, &pgm, &self.hash(Stage::Pgm))?;
        }
        self.say(format!(
            "wrote {} models to {} ({rejected} unstable draws rejected)",
            c.pgm.count,
            self.dir().display()
        ));
        Ok(())
    }

    pub fn load_pgm(&self, g: usize) -> Result<GaussianPgm> {
        Ok(load_pgm(&pgm_path(self.dir(), g), &self.hash(Stage::Pgm), self.force)?.1)
    }

    pub fn load_pgms(&self) -> Result<Vec<GaussianPgm>> {
        (0..self.config.pgm.count).map(|g| self.load_pgm(g)).collect()
    }

    pub fn gen_traces(&self) -> Result<()> {
        let c = &self.config;
        for (g, pgm) in self.load_pgms()?.iter().enumerate() {
            let ds = generate_traces(
                g,
                pgm,
                &c.schedule,
                &c.bp,
                c.traces.trials,
                &c.traces.splits,
                rng::indexed(c.seed, "traces", g as u64),
            )
            .with_context(|| format!("generating traces for model {g}"))?;
            save_traces(self.dir(), g, &ds, &self.hash(Stage::Traces))?;
        }
        self.say(format!("wrote traces for {} models", c.pgm.count));
        Ok(())
    }

    pub fn load_traces(&self, g: usize) -> Result<TraceDataset> {
        load_traces(self.dir(), g, &self.hash(Stage::Traces), self.force)
    }

    pub fn load_datasets(&self) -> Result<Vec<TraceDataset>> {
        (0..self.config.pgm.count).map(|g| self.load_traces(g)).collect()
    }

    /// Trains the configured architecture, or its colorless variant, on
    /// every model's traces.
    pub fn train(&self, colorless: bool) -> Result<Checkpoint> {
        let datasets = self.load_datasets()?;
        let arch = if colorless {
            self.config.architecture.colorless()
        } else {
            self.config.architecture.clone()
        };
        let mut log = Vec::new();
        let ens = train_multi(&datasets, &arch, &self.config.train_config(), |r: &LogRecord| {
            log.extend(serde_json::to_vec(r).expect("serializable"));
            log.push(b'\n');
            if let Some(v) = r.val_mse {
                eprintln!("step {:>6}  val mse {v:.5}", r.step);
            }
        })?;
        let (ckpt_name, log_name) = if colorless {
            (COLORLESS, "colorless_log.ndjson")
        } else {
            (ENSEMBLE, "train_log.ndjson")
        };
        write_atomic(&self.path(log_name), &log)?;
        let ckpt = Checkpoint::from_ensemble(&ens, &self.hash(Stage::Ensemble));
        ckpt.save(&self.path(ckpt_name))?;
        let variant = if colorless { "colorless" } else { "trained" };
        let mut rows = Vec::new();
        for gm in &ens.metrics.per_graph {
            for (split, m) in [("train", gm.metrics.train), ("val", gm.metrics.val), ("test", gm.metrics.test)] {
                rows.push(vec![gm.pgm_id.to_string(), variant.into(), split.into(), f(m.mse), f(m.r2)]);
            }
        }
        write_table(
            &self.path(&format!("fit_{variant}.csv")),
            &["graph_id", "variant", "split", "mse", "r2"],
            rows,
        )?;
        self.say(format!(
            "{variant}: best step {} of {}, pooled test mse {:.5}, R² {:.4}",
            ens.best_step, ens.steps_run, ens.metrics.pooled.test.mse, ens.metrics.pooled.test.r2
        ));
        Ok(ckpt)
    }

    pub fn load_checkpoint(&self, name: &str) -> Result<Checkpoint> {
        let ckpt = Checkpoint::load(&self.path(name), &self.hash(Stage::Ensemble), self.force)?;
        if ckpt.structural.len() != self.config.pgm.count {
            bail!("{name}: holds {} graphs, config has {}", ckpt.structural.len(), self.config.pgm.count);
        }
        Ok(ckpt)
    }

    pub fn search(&self) -> Result<()> {
        let datasets = self.load_datasets()?;
        let out = run_search(&self.config.search, &self.config.architecture, &datasets, &self.config.train_config())?;
        let rows = out.records.iter().map(|r| {
            vec![
                r.trial.to_string(),
                r.arch.connectivity.to_string(),
                r.arch.d_v.to_string(),
                r.arch.d_e.to_string(),
                r.arch.d_s.to_string(),
                r.arch.d_m.to_string(),
                hidden_label(&r.arch.message_hidden),
                r.seed.to_string(),
                f(r.test_mse),
                f(r.test_r2),
                format!("{:.3}", r.seconds),
            ]
        });
        write_table(
            &self.path(SEARCH),
            &["trial", "connectivity", "D_v", "D_e", "D_s", "D_m", "msg_hidden", "seed", "test_mse", "test_r2", "seconds"],
            rows,
        )?;
        let rows = out.conditional.iter().map(|r| {
            vec![
                r.axis.to_string(),
                r.value.clone(),
                r.trial.to_string(),
                f(r.test_mse),
                f(r.log10_mse),
                f(out.baseline_mse),
            ]
        });
        write_table(
            &self.path("search_conditional.csv"),
            &["axis", "value", "trial", "test_mse", "log10_mse", "baseline_mse"],
            rows,
        )?;
        self.say(format!("{} trials; baseline mse {:.5}", out.records.len(), out.baseline_mse));
        Ok(())
    }

    /// Rollouts with intermediates on the first test trials of graph `g`.
    fn rollouts(&self, ckpt: &Checkpoint, ds: &TraceDataset, g: usize) -> Result<(Vec<RolloutResult>, Vec<usize>)> {
        let trials: Vec<usize> = ds.trials_in(Split::Test).into_iter().take(self.config.analysis.rollout_trials).collect();
        let mut out = Vec::with_capacity(trials.len());
        for &r in &trials {
            let x = ds.inputs.index_axis(Axis(0), r).insert_axis(Axis(2));
            out.push(rollout(&ckpt.arch, &ckpt.dynamical, &ckpt.structural[g], x)?);
        }
        Ok((out, trials))
    }

    pub fn analyze(&self) -> Result<()> {
        let c = &self.config;
        let pgms = self.load_pgms()?;
        let datasets = self.load_datasets()?;
        let ckpt = self.load_checkpoint(ENSEMBLE)?;
        let mut rollouts = Vec::new();
        for (g, ds) in datasets.iter().enumerate() {
            rollouts.push(self.rollouts(&ckpt, ds, g)?);
        }
        let records: Vec<GraphRecord> = (0..pgms.len())
            .map(|g| GraphRecord {
                pgm: &pgms[g],
                structural: &ckpt.structural[g],
                rollouts: &rollouts[g].0,
            })
            .collect();
        let report = manifold_report(&ckpt.arch, &records, c.analysis.cap, rng::substream(c.seed, "analysis"))?;
        let dir = self.path("analysis");
        let mut summary = Vec::new();
        let clouds: [(&str, Option<&CloudSummary>); 5] = [
            ("states", Some(&report.states)),
            ("messages", report.messages.as_ref()),
            ("aggregated", report.aggregated.as_ref()),
            ("vertex_params", report.vertex_params.as_ref()),
            ("edge_params", report.edge_params.as_ref()),
        ];
        for (name, cloud) in clouds {
            let Some(cloud) = cloud else { continue };
            write_table(
                &dir.join(format!("spectrum_{name}.csv")),
                &["component", "variance"],
                cloud.pca.variances.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), f(*v)]),
            )?;
            write_table(
                &dir.join(format!("projection_{name}.csv")),
                &["x", "y", "color_key"],
                cloud.projection.iter().map(|p| p.iter().map(|v| f(*v)).collect()),
            )?;
            summary.push(vec![
                name.to_string(),
                cloud.projection.len().to_string(),
                cloud.pca.variances.len().to_string(),
                f(cloud.pca.effective_dimension),
            ]);
        }
        write_table(&dir.join("summary.csv"), &["cloud", "points", "dimension", "effective_dimension"], summary)?;

        let g = c.analysis.grid_graph;
        let (rs, trials) = &rollouts[g];
        let inputs: Vec<_> = trials.iter().map(|&r| datasets[g].inputs.index_axis(Axis(0), r)).collect();
        let proxies = proxy_projection(rs, &inputs)?;
        let v = c.analysis.grid_vertex.min(pgms[g].n() - 1);
        let sizes = c.analysis.grid_size;
        let grid = update_grid(
            &ckpt.arch,
            &ckpt.dynamical,
            &ckpt.structural[g],
            &proxies,
            v,
            proxies.aggregated[v].range(),
            proxies.input_range[v],
            sizes,
        )?;
        write_grid(&dir.join("update_grid.csv"), &grid)?;
        if ckpt.arch.connectivity == Connectivity::Full && pgms[g].n() > 1 {
            let j = (v + 1) % pgms[g].n();
            let grid = message_grid(
                &ckpt.arch,
                &ckpt.dynamical,
                &ckpt.structural[g],
                &proxies,
                (v, j),
                proxies.states[v].range(),
                proxies.states[j].range(),
                sizes,
            )?;
            write_grid(&dir.join("message_grid.csv"), &grid)?;
        }
        self.say(format!(
            "state D~ {:.3}; message D~ {}",
            report.states.pca.effective_dimension,
            report.messages.as_ref().map_or("n/a".into(), |m| format!("{:.3}", m.pca.effective_dimension))
        ));
        Ok(())
    }

    fn translator_split(&self) -> Result<TranslatorSplit> {
        let c = &self.config;
        Ok(TranslatorSplit::assign(
            c.pgm.count,
            c.translator.split,
            c.translator.fraction,
            rng::substream(c.seed, "translator-split"),
        )?)
    }

    /// Fits all four regressors. Only training and validation models are read.
    pub fn fit_translator(&self) -> Result<()> {
        let c = &self.config;
        let ckpt = self.load_checkpoint(ENSEMBLE)?;
        let split = self.translator_split()?;
        let known: Vec<(usize, GaussianPgm)> = split
            .train
            .iter()
            .chain(&split.val)
            .map(|&g| Ok((g, self.load_pgm(g)?)))
            .collect::<Result<_>>()?;
        let samples = |ids: &[usize]| -> Vec<GraphSample> {
            ids.iter()
                .map(|g| GraphSample {
                    structural: &ckpt.structural[*g],
                    pgm: &known.iter().find(|(k, _)| k == g).expect("loaded").1,
                })
                .collect()
        };
        let (train, val) = (samples(&split.train), samples(&split.val));
        let translator = GraphTranslator::fit(
            &train,
            &val,
            c.translator.fraction,
            &c.translator.regressor,
            rng::substream(c.seed, "translator"),
        )?;
        let mut rows = Vec::new();
        for d in Direction::ALL {
            let Some(reg) = translator.regressor(d) else { continue };
            for (name, set) in [("train", &train), ("val", &val)] {
                if set.is_empty() {
                    continue;
                }
                let m = regressor_r2(reg, set, d)?;
                rows.push(vec![d.name().into(), name.into(), f(m.mse), f(m.r2)]);
            }
        }
        write_table(&self.path("translator_fit.csv"), &["direction", "split", "mse", "r2"], rows)?;
        TranslatorFile {
            header: Header::new("bpgnn-translator", &self.hash(Stage::Translator)),
            split,
            translator,
        }
        .save(&self.path(TRANSLATOR))?;
        self.say("translator fitted");
        Ok(())
    }

    pub fn load_translator(&self) -> Result<TranslatorFile> {
        TranslatorFile::load(&self.path(TRANSLATOR), &self.hash(Stage::Translator), self.force)
    }

    /// Recovers precision matrices of the held-out models from their trained
    /// structural parameters and scores them against the generating models.
    pub fn recover(&self) -> Result<()> {
        let ckpt = self.load_checkpoint(ENSEMBLE)?;
        let t = self.load_translator()?;
        let threshold = self.config.threshold();
        let mut entries = Vec::new();
        let mut scores = Vec::new();
        let pgms: Vec<(usize, GaussianPgm)> = t.split.test.iter().map(|&g| Ok((g, self.load_pgm(g)?))).collect::<Result<_>>()?;
        for (g, pgm) in &pgms {
            let rec = recover_precision_matrix(&ckpt.structural[*g], &t.translator, threshold)?;
            let a = pgm.precision();
            for i in 0..pgm.n() {
                for j in 0..pgm.n() {
                    entries.push(vec![
                        g.to_string(),
                        i.to_string(),
                        j.to_string(),
                        f(a[(i, j)]),
                        f(rec.raw[(i, j)]),
                        f(rec.symmetrized[(i, j)]),
                        u8::from(rec.adjacency[(i, j)]).to_string(),
                        u8::from(i != j && pgm.is_edge(i, j)).to_string(),
                    ]);
                }
            }
            let (p, r, f1) = support_f1(&rec, pgm);
            scores.push(vec![g.to_string(), f(threshold), f(p), f(r), f(f1)]);
        }
        let samples: Vec<GraphSample> = pgms
            .iter()
            .map(|(g, pgm)| GraphSample {
                structural: &ckpt.structural[*g],
                pgm,
            })
            .collect();
        let mut metrics = Vec::new();
        for d in Direction::ALL {
            if let Some(reg) = t.translator.regressor(d) {
                let m = regressor_r2(reg, &samples, d)?;
                metrics.push(vec![d.name().into(), "test".into(), f(m.mse), f(m.r2)]);
            }
        }
        write_table(
            &self.path("recovered.csv"),
            &["graph_id", "i", "j", "true", "raw", "symmetrized", "adjacent", "true_edge"],
            entries,
        )?;
        write_table(&self.path("recovery.csv"), &["graph_id", "threshold", "precision", "recall", "f1"], scores)?;
        write_table(&self.path("translator_test.csv"), &["direction", "split", "mse", "r2"], metrics)?;
        self.say(format!("recovered {} held-out models", pgms.len()));
        Ok(())
    }

    /// Builds GNNs for the held-out models from their precision matrices alone.
    pub fn construct(&self) -> Result<()> {
        let ckpt = self.load_checkpoint(ENSEMBLE)?;
        let t = self.load_translator()?;
        let mut structural = Vec::new();
        for &g in &t.split.test {
            let pgm = self.load_pgm(g)?;
            let m = construct_gnn(
                &pgm,
                &ckpt.arch,
                &ckpt.dynamical,
                Some(&t.translator),
                self.config.translator.allow_extrapolation,
            )
            .with_context(|| format!("constructing a model for graph {g}"))?;
            structural.push(m.structural);
        }
        ConstructedFile {
            header: Header::new("bpgnn-constructed", &self.hash(Stage::Translator)),
            graphs: t.split.test.clone(),
            structural,
        }
        .save(&self.path(CONSTRUCTED))?;
        self.say(format!("constructed {} models", t.split.test.len()));
        Ok(())
    }

    /// Compares trained, constructed and (when trained) colorless models on
    /// the held-out models' test trials.
    pub fn evaluate(&self) -> Result<()> {
        let ckpt = self.load_checkpoint(ENSEMBLE)?;
        let constructed = ConstructedFile::load(&self.path(CONSTRUCTED), &self.hash(Stage::Translator), self.force)?;
        let colorless = if self.path(COLORLESS).exists() {
            Some(self.load_checkpoint(COLORLESS)?)
        } else {
            self.say(format!("{} not found; skipping the colorless control", self.path(COLORLESS).display()));
            None
        };
        let datasets: Vec<TraceDataset> = constructed.graphs.iter().map(|&g| self.load_traces(g)).collect::<Result<_>>()?;
        let mut variants = vec![
            ("trained".to_string(), constructed.graphs.iter().map(|&g| ckpt.model(g)).collect()),
            (
                "constructed".to_string(),
                constructed
                    .structural
                    .iter()
                    .map(|s| bpgnn::gnn::GnnModel {
                        arch: ckpt.arch.clone(),
                        dynamical: ckpt.dynamical.clone(),
                        structural: s.clone(),
                    })
                    .collect(),
            ),
        ];
        if let Some(cl) = &colorless {
            variants.push(("colorless".to_string(), constructed.graphs.iter().map(|&g| cl.model(g)).collect()));
        }
        let refs: Vec<&TraceDataset> = datasets.iter().collect();
        let report = evaluate_generalization(&refs, &variants, self.config.train.burn_in)?;
        write_table(
            &self.path(REPORT),
            &["graph_id", "variant", "mse", "r2"],
            report.rows.iter().map(|r| vec![r.graph_id.to_string(), r.variant.clone(), f(r.mse), f(r.r2)]),
        )?;
        let mut rows = Vec::new();
        for ex in &report.examples {
            let mut series: Vec<(&str, &ndarray::Array2<f64>)> = vec![("input", &ex.inputs), ("target", &ex.targets)];
            series.extend(ex.outputs.iter().map(|(n, a)| (n.as_str(), a)));
            for (name, a) in series {
                for ((i, t), v) in a.indexed_iter() {
                    rows.push(vec![ex.graph_id.to_string(), ex.trial.to_string(), name.into(), i.to_string(), t.to_string(), f(*v)]);
                }
            }
        }
        write_table(&self.path("example_traces.csv"), &["graph_id", "trial", "series", "vertex", "t", "value"], rows)?;
        let mut line = String::new();
        for (name, _) in &variants {
            let _ = write!(line, "{name} {:.5}  ", report.pooled_mse(name));
        }
        self.say(format!("test mse: {line}"));
        Ok(())
    }

    /// CSV tables behind each figure, written under `plots/`.
    pub fn export_plots(&self) -> Result<()> {
        let plots = self.path("plots");
        let ds = self.load_traces(0)?;
        let r = ds.trials_in(Split::Test).first().copied().unwrap_or(0);
        let mut rows = Vec::new();
        for i in 0..ds.n() {
            for t in 0..ds.duration() {
                rows.push(vec![
                    i.to_string(),
                    t.to_string(),
                    f(ds.inputs[(r, i, t)]),
                    f(ds.targets[(r, i, t)]),
                    f(ds.reference[(r, i, t)]),
                ]);
            }
        }
        write_table(&plots.join("fig2_bp_trace.csv"), &["vertex", "t", "bias", "noisy_mean", "noiseless_mean"], rows)?;

        if self.path(SEARCH).exists() {
            copy(&self.path(SEARCH), &plots.join("fig3a_search.csv"))?;
            copy(&self.path("search_conditional.csv"), &plots.join("fig3a_conditional.csv"))?;
        } else {
            self.say(format!("{} not found; skipping the search figure", self.path(SEARCH).display()));
        }

        let ckpt = self.load_checkpoint(ENSEMBLE)?;
        let mut rows = Vec::new();
        for g in 0..self.config.pgm.count {
            let ds = self.load_traces(g)?;
            let trials = ds.trials_in(Split::Test);
            let pred = predict_trials(&ckpt.arch, &ckpt.dynamical, &ckpt.structural[g], &ds, &trials)?;
            for (b, &r) in trials.iter().enumerate() {
                for i in 0..ds.n() {
                    for t in self.config.train.burn_in..ds.duration() {
                        rows.push(vec![g.to_string(), i.to_string(), f(ds.targets[(r, i, t)]), f(pred[(b, i, t)])]);
                    }
                }
            }
        }
        write_table(&plots.join("fig3b_fit.csv"), &["graph_id", "vertex", "target", "output"], rows)?;

        let analysis = self.path("analysis");
        for (src, dst) in [
            ("spectrum_states.csv", "fig4a_state_spectrum.csv"),
            ("projection_states.csv", "fig4b_state_projection.csv"),
            ("spectrum_messages.csv", "fig4c_message_spectrum.csv"),
            ("projection_messages.csv", "fig4d_message_projection.csv"),
            ("update_grid.csv", "fig5a_update_grid.csv"),
            ("message_grid.csv", "fig5b_message_grid.csv"),
            ("spectrum_vertex_params.csv", "fig6a_vertex_spectrum.csv"),
            ("projection_vertex_params.csv", "fig6b_vertex_projection.csv"),
            ("spectrum_edge_params.csv", "fig6c_edge_spectrum.csv"),
            ("projection_edge_params.csv", "fig6d_edge_projection.csv"),
        ] {
            let from = analysis.join(src);
            if from.exists() {
                copy(&from, &plots.join(dst))?;
            }
        }
        copy(&self.path("recovered.csv"), &plots.join("fig7b_recovered.csv"))?;

        let t = self.load_translator()?;
        let mut rows = Vec::new();
        for &g in &t.split.test {
            let pgm = self.load_pgm(g)?;
            let sample = GraphSample {
                structural: &ckpt.structural[g],
                pgm: &pgm,
            };
            for (d, vertex) in [(Direction::VertexForward, true), (Direction::EdgeForward, false)] {
                let Some(reg) = t.translator.regressor(d) else { continue };
                for (x, a) in bpgnn::translator::graph_pairs(&sample, vertex) {
                    rows.push(vec![g.to_string(), d.name().into(), f(a), f(reg.predict(&x)?[0])]);
                }
            }
        }
        write_table(&plots.join("fig7a_translator.csv"), &["graph_id", "direction", "true", "predicted"], rows)?;

        let constructed = ConstructedFile::load(&self.path(CONSTRUCTED), &self.hash(Stage::Translator), self.force)?;
        let mut rows = Vec::new();
        for (k, &g) in constructed.graphs.iter().enumerate() {
            let (built, trained) = (&constructed.structural[k], &ckpt.structural[g]);
            for ((i, c), v) in built.vertex.indexed_iter() {
                rows.push(vec![g.to_string(), "vertex".into(), i.to_string(), c.to_string(), f(*v), f(trained.vertex[(i, c)])]);
            }
            let n = built.n();
            for ((k, c), v) in built.edge.indexed_iter() {
                let (i, j) = pairs(n)[k];
                rows.push(vec![
                    g.to_string(),
                    "edge".into(),
                    format!("{i}-{j}"),
                    c.to_string(),
                    f(*v),
                    f(trained.edge[(k, c)]),
                ]);
            }
        }
        write_table(
            &plots.join("fig8a_parameters.csv"),
            &["graph_id", "kind", "index", "component", "constructed", "trained"],
            rows,
        )?;
        copy(&self.path(REPORT), &plots.join("fig8b_report.csv"))?;
        copy(&self.path("example_traces.csv"), &plots.join("fig8c_example_traces.csv"))?;
        self.say(format!("plot tables in {}", plots.display()));
        Ok(())
    }
}

fn write_grid(path: &Path, grid: &GridTable) -> Result<()> {
    write_table(
        path,
        &[&grid.u_label, &grid.v_label, &grid.value_label],
        grid.rows.iter().map(|r| r.iter().map(|v| f(*v)).collect()),
    )
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    let bytes = read_required(from)?;
    write_atomic(to, &bytes)
}
