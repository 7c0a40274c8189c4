//! The end-to-end experiment, split into stages the CLI can also run one at
//! a time. Every stage reads what earlier stages wrote to the output
//! directory, so a stage run alone needs its inputs on disk.
//!
//! Output files:
//!
//! | file | stage |
//! |------|-------|
//! | `config.txt` | every stage |
//! | `train.csv`, `test.csv` | `gen-data` |
//! | `dnn.ckpt`, `dnn_train_log.csv`, `checkpoints/dnn_epoch_*.ckpt` | `train-dnn` |
//! | `bnn.ckpt`, `bnn_train_log.csv`, `checkpoints/bnn_epoch_*.ckpt` | `train-bnn` |
//! | `interactions.csv`, `sparsity.csv`, `planted.csv` | `interactions` |
//! | `surrogate_plan.csv`, `surrogate_fit.csv` | `surrogate-fit` |
//! | `comparison3.csv`, `metrics.csv` | `metrics` |
//! | `oracles.csv` | `oracles` |
//! | `robustness.csv` | `attack` |
//! | `*.svg` | `plot` |
//! | `checks.csv` | `pipeline` |
//! | `failure.csv` | any stage that fails |

use std::fs;
use std::path::{Path, PathBuf};

use bayes_concepts_core::attack::{adversarial_accuracy, bnn_adversarial_accuracy, PgdConfig};
use bayes_concepts_core::bnn::{bnn_accuracy, bnn_from_dnn, train_bnn, BnnEnsemble, BnnModel, BnnTrainConfig};
use bayes_concepts_core::dataset::{generate_synthetic, sparse_and_label, Dataset};
use bayes_concepts_core::interaction::{
    interaction_table, sample_active_variables, zeta_reconstruct, InteractionTable, MaskContext,
    RegionFilter,
};
use bayes_concepts_core::metrics::{
    generalization_profile, order_strength, order_variance_stability_bnn, order_variance_stability_noise,
    planted_recovery, NoiseSpec, Probe,
};
use bayes_concepts_core::nn::{Classifier, MlpModel};
use bayes_concepts_core::oracle::oracle_suite;
use bayes_concepts_core::rng;
use bayes_concepts_core::surrogate::{fit_surrogate, SurrogateFit, SurrogateFitConfig};
use bayes_concepts_core::train::{accuracy, match_accuracy, train_dnn, AccuracyMatch, TrainConfig};

use crate::checkpoint::{load_bnn, load_mlp, save_bnn, save_mlp};
use crate::config::{ExperimentConfig, Stage};
use crate::data::{read_csv_raw, write_dataset_csv};
use crate::plot::emit_plots;
use crate::report::{self, Check, MetricRow, Provenance, RobustnessRow};
use crate::{Error, Result};

/// Largest allowed `|v(T) - zeta(I)(T)|` in the faithfulness check.
pub const FAITHFULNESS_TOLERANCE: f64 = 1e-6;

/// Consecutive KL increases that abort a surrogate layer fit.
pub const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Generates or reads the data, splits it, and standardises both parts with
/// the train statistics.
pub fn prepare_data(config: &ExperimentConfig) -> Result<Splits> {
    let seed = config.stage_seed(Stage::Data);
    let raw = match config.synthetic_spec() {
        Some(spec) => generate_synthetic(&spec, rng::derive(seed, 0))?,
        None => read_csv_raw(Path::new(&config.csv_path))?,
    };
    let (train, test) = raw.train_test_split(config.test_fraction, rng::derive(seed, 1))?;
    let (train, test) = Dataset::normalize_pair(&train, &test)?;
    Ok(Splits { train, test })
}

/// Input width, the configured hidden widths, then one output per class.
pub fn layer_widths(config: &ExperimentConfig, data: &Dataset) -> Vec<usize> {
    let mut w = vec![data.n_features()];
    w.extend(&config.hidden.0);
    w.push(data.n_classes());
    w
}

/// A trained model, its per-epoch train accuracy and the per-epoch models.
/// A run of zero epochs reports the untrained model as its only epoch.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub log: Vec<f64>,
    pub checkpoints: Vec<M>,
}

/// The three DNN/BNN pairs compared by order strength.
#[derive(Debug, Clone)]
pub struct Comparisons {
    /// The trained BNN against its mean network.
    pub cmp1: (MlpModel, BnnModel),
    /// The trained DNN against a BNN centred on it with the trained BNN's
    /// per-layer mean variances.
    pub cmp2: (MlpModel, BnnModel),
    /// DNN and BNN checkpoints of matched training accuracy.
    pub cmp3: (MlpModel, BnnModel),
    pub pairing: AccuracyMatch,
}

/// Probes on a shared active set: `test` drives every metric, `train` is the
/// other half of the generalization comparison.
#[derive(Debug, Clone)]
pub struct ProbeSets {
    pub active: Vec<usize>,
    pub test: Vec<Probe>,
    pub train: Vec<Probe>,
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct Report {
    pub dir: PathBuf,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// One output directory under one config.
pub struct Run {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    prov: Provenance,
}

impl Run {
    /// Creates the output directory and writes `config.txt`.
    pub fn create(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dir = PathBuf::from(&config.output_dir);
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(&dir, e))?;
        let prov = Provenance::of(&config);
        let run = Self { config, dir, prov };
        let path = run.path("config.txt");
        let text = format!("# {}\n{}", run.prov.line(""), run.config.to_text());
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    fn seed(&self, stage: Stage) -> u64 {
        self.config.stage_seed(stage)
    }

    /// Runs `f`, writing `failure.csv` if it fails.
    pub fn guarded<T>(&self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        f().inspect_err(|e| {
            let path = self.path("failure.csv");
            let _ = report::write_csv(
                &path,
                &self.prov.line(""),
                &["stage", "message"],
                [vec![stage.to_string(), e.to_string()]],
            );
        })
    }

    fn require(&self, names: &[&str]) -> Result<()> {
        let missing: Vec<String> = names
            .iter()
            .map(|n| self.path(n))
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingInputs(missing))
        }
    }

    pub fn gen_data(&self) -> Result<Splits> {
        let splits = prepare_data(&self.config)?;
        let mut comment = vec![self.prov.line("")];
        if !splits.train.planted().is_empty() {
            let planted: Vec<String> = splits
                .train
                .planted()
                .iter()
                .map(|c| c.iter().map(usize::to_string).collect::<Vec<_>>().join("+"))
                .collect();
            comment.push(format!("planted={}", planted.join(",")));
        }
        comment.push("features standardised with train statistics".into());
        write_dataset_csv(&self.path("train.csv"), &splits.train, &comment)?;
        write_dataset_csv(&self.path("test.csv"), &splits.test, &comment)?;
        Ok(splits)
    }

    fn train_config(&self, learning_rate: f64, epochs: usize, batch_size: usize) -> TrainConfig {
        TrainConfig {
            learning_rate,
            epochs,
            batch_size,
            seed: self.seed(Stage::Train),
            keep_checkpoints: true,
            ..TrainConfig::default()
        }
    }

    fn write_log(&self, name: &str, log: &[f64]) -> Result<()> {
        let rows = log
            .iter()
            .enumerate()
            .map(|(e, a)| vec![e.to_string(), a.to_string()]);
        report::write_csv(&self.path(name), &self.prov.line(""), &["epoch", "train_accuracy"], rows)
    }

    fn epoch_file(kind: &str, epoch: usize) -> String {
        format!("checkpoints/{kind}_epoch_{epoch:04}.ckpt")
    }

    pub fn train_dnn(&self, splits: &Splits) -> Result<Trained<MlpModel>> {
        let c = &self.config;
        let init = MlpModel::init(&layer_widths(c, &splits.train), self.seed(Stage::Init))?;
        let cfg = self.train_config(c.dnn_learning_rate, c.dnn_epochs, c.dnn_batch_size);
        let out = train_dnn(init, &splits.train, &cfg)?;
        let trained = if out.accuracy.is_empty() {
            Trained {
                log: vec![accuracy(&out.model, &splits.train)?],
                checkpoints: vec![out.model.clone()],
                model: out.model,
            }
        } else {
            Trained {
                model: out.model,
                log: out.accuracy,
                checkpoints: out.checkpoints,
            }
        };
        let stamp = self.prov.line("");
        save_mlp(&self.path("dnn.ckpt"), &trained.model, &stamp)?;
        for (e, m) in trained.checkpoints.iter().enumerate() {
            save_mlp(&self.path(&Self::epoch_file("dnn", e)), m, &stamp)?;
        }
        self.write_log("dnn_train_log.csv", &trained.log)?;
        Ok(trained)
    }

    fn bnn_train_config(&self) -> BnnTrainConfig {
        let c = &self.config;
        BnnTrainConfig {
            base: self.train_config(c.bnn_learning_rate, c.bnn_epochs, c.bnn_batch_size),
            mc_samples: c.bnn_mc_samples,
            kl_weight: c.bnn_kl_weight,
            eval_samples: c.bnn_eval_samples,
        }
    }

    pub fn train_bnn(&self, splits: &Splits) -> Result<Trained<BnnModel>> {
        let c = &self.config;
        let init = BnnModel::init(
            &layer_widths(c, &splits.train),
            c.bnn_initial_sigma,
            self.seed(Stage::Init),
        )?;
        let cfg = self.bnn_train_config();
        let out = train_bnn(init, &splits.train, &cfg)?;
        let trained = if out.accuracy.is_empty() {
            Trained {
                log: vec![bnn_accuracy(&out.model, &splits.train, cfg.eval_samples, cfg.base.seed)?],
                checkpoints: vec![out.model.clone()],
                model: out.model,
            }
        } else {
            Trained {
                model: out.model,
                log: out.accuracy,
                checkpoints: out.checkpoints,
            }
        };
        let stamp = self.prov.line("");
        save_bnn(&self.path("bnn.ckpt"), &trained.model, &stamp)?;
        for (e, m) in trained.checkpoints.iter().enumerate() {
            save_bnn(&self.path(&Self::epoch_file("bnn", e)), m, &stamp)?;
        }
        self.write_log("bnn_train_log.csv", &trained.log)?;
        Ok(trained)
    }

    fn read_log(&self, name: &str) -> Result<Vec<f64>> {
        let path = self.path(name);
        let (_, rows) = report::read_csv(&path)?;
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                r.get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::parse(&path, i + 3, "bad accuracy"))
            })
            .collect()
    }

    /// The final models and logs written by the training stages; per-epoch
    /// checkpoints stay on disk and are read on demand.
    pub fn load_trained(&self) -> Result<(Trained<MlpModel>, Trained<BnnModel>)> {
        self.require(&["dnn.ckpt", "dnn_train_log.csv", "bnn.ckpt", "bnn_train_log.csv"])?;
        Ok((
            Trained {
                model: load_mlp(&self.path("dnn.ckpt"))?,
                log: self.read_log("dnn_train_log.csv")?,
                checkpoints: Vec::new(),
            },
            Trained {
                model: load_bnn(&self.path("bnn.ckpt"))?,
                log: self.read_log("bnn_train_log.csv")?,
                checkpoints: Vec::new(),
            },
        ))
    }

    fn dnn_at(&self, t: &Trained<MlpModel>, epoch: usize) -> Result<MlpModel> {
        match t.checkpoints.get(epoch) {
            Some(m) => Ok(m.clone()),
            None => {
                let name = Self::epoch_file("dnn", epoch);
                self.require(&[&name])?;
                load_mlp(&self.path(&name))
            }
        }
    }

    fn bnn_at(&self, t: &Trained<BnnModel>, epoch: usize) -> Result<BnnModel> {
        match t.checkpoints.get(epoch) {
            Some(m) => Ok(m.clone()),
            None => {
                let name = Self::epoch_file("bnn", epoch);
                self.require(&[&name])?;
                load_bnn(&self.path(&name))
            }
        }
    }

    /// Builds the three comparison pairs and writes `comparison3.csv`.
    pub fn comparisons(&self, dnn: &Trained<MlpModel>, bnn: &Trained<BnnModel>) -> Result<Comparisons> {
        let pairing = match_accuracy(&dnn.log, &bnn.log, self.config.match_tolerance)?;
        let variances = bnn.model.layer_mean_variances();
        let cmp = Comparisons {
            cmp1: (bnn.model.mean_model(), bnn.model.clone()),
            cmp2: (dnn.model.clone(), bnn_from_dnn(&dnn.model, &variances)?),
            cmp3: (self.dnn_at(dnn, pairing.dnn_epoch)?, self.bnn_at(bnn, pairing.bnn_epoch)?),
            pairing,
        };
        let row = vec![
            pairing.dnn_epoch.to_string(),
            pairing.bnn_epoch.to_string(),
            dnn.log[pairing.dnn_epoch].to_string(),
            bnn.log[pairing.bnn_epoch].to_string(),
            pairing.gap.to_string(),
            pairing.flagged.to_string(),
        ];
        report::write_csv(
            &self.path("comparison3.csv"),
            &self.prov.line(&format!("tolerance={}", self.config.match_tolerance)),
            &["dnn_epoch", "bnn_epoch", "dnn_train_acc", "bnn_train_acc", "gap", "flagged"],
            [row],
        )?;
        Ok(cmp)
    }

    /// Probe samples drawn from each split, on one seeded active set.
    pub fn probes(&self, splits: &Splits) -> Result<ProbeSets> {
        let seed = self.seed(Stage::Probe);
        let n = splits.train.n_features();
        let active = sample_active_variables(n, self.config.n_active(n), &RegionFilter::All, rng::derive(seed, 0))?;
        let means = splits.train.column_means();
        let pick = |data: &Dataset, stream: u64| -> Result<Vec<Probe>> {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            rng::shuffle(&mut rng::seeded(rng::derive(seed, stream)), &mut idx);
            idx.truncate(self.config.probes);
            idx.sort_unstable();
            idx.iter()
                .map(|&i| {
                    Ok(Probe {
                        context: MaskContext::new(data.row(i).to_vec(), means.clone(), self.config.tau, &active)?,
                        label: data.label(i),
                    })
                })
                .collect()
        };
        Ok(ProbeSets {
            test: pick(&splits.test, 1)?,
            train: pick(&splits.train, 2)?,
            active: active.clone(),
        })
    }

    fn ensemble(&self, bnn: &BnnModel, stream: u64) -> Result<BnnEnsemble> {
        Ok(BnnEnsemble::sample(
            bnn,
            self.config.ensemble_size,
            rng::derive(self.seed(Stage::Noise), stream),
        )?)
    }

    /// Dividend tables of the DNN and the BNN ensemble on every test probe,
    /// their sorted magnitudes, the faithfulness check and, for sparse-AND
    /// data, the ranks of the planted concepts.
    pub fn interactions(&self, splits: &Splits, dnn: &MlpModel, bnn: &BnnModel) -> Result<Vec<Check>> {
        let probes = self.probes(splits)?;
        let ens = self.ensemble(bnn, 0)?;
        let models: [(&str, &dyn Classifier); 2] = [("dnn", dnn), ("bnn", &ens)];
        let mut tables: Vec<(&str, usize, InteractionTable)> = Vec::new();
        let mut worst = 0.0f64;
        for &(id, model) in &models {
            for (i, p) in probes.test.iter().enumerate() {
                let t = interaction_table(model, &p.context, p.label)?;
                let back = zeta_reconstruct(&t);
                for (a, b) in back.iter().zip(t.raw()) {
                    worst = worst.max((a - b).abs());
                }
                tables.push((id, i, t));
            }
        }
        let refs: Vec<(&str, usize, &InteractionTable)> = tables.iter().map(|(m, p, t)| (*m, *p, t)).collect();
        let ctx = &probes.test[0].context;
        let seed = self.seed(Stage::Probe);
        report::write_interactions(&self.path("interactions.csv"), &self.prov, ctx, &refs, seed)?;
        report::write_sparsity(&self.path("sparsity.csv"), &self.prov, &refs)?;
        let mut checks = vec![Check::new(
            "faithfulness",
            worst <= FAITHFULNESS_TOLERANCE,
            format!("max |v - zeta(I)| = {worst:e}"),
        )];
        if let Some(c) = self.planted(splits, &probes, &models)? {
            checks.push(c);
        }
        Ok(checks)
    }

    /// Planted concepts fully inside the active set, as active-set masks.
    fn planted_masks(&self, splits: &Splits, active: &[usize]) -> Vec<usize> {
        splits
            .train
            .planted()
            .iter()
            .filter_map(|c| {
                c.iter()
                    .map(|f| active.iter().position(|a| a == f).map(|p| 1usize << p))
                    .sum::<Option<usize>>()
            })
            .collect()
    }

    fn planted(&self, splits: &Splits, probes: &ProbeSets, models: &[(&str, &dyn Classifier)]) -> Result<Option<Check>> {
        let masks = self.planted_masks(splits, &probes.active);
        let Some(norm) = splits.train.normalization() else {
            return Ok(None);
        };
        if masks.is_empty() {
            return Ok(None);
        }
        let planted = splits.train.planted().to_vec();
        let grid = self.config.grid;
        let truth = |x: &[f64]| sparse_and_label(&planted, grid, &norm.denormalize(x));
        let mut rows = Vec::new();
        let mut dnn_rank = None;
        for &(id, model) in models {
            let rec = planted_recovery(model, &probes.test, &masks, truth, self.config.salient_threshold)?;
            for r in &rec.ranks {
                rows.push(vec![
                    id.to_string(),
                    r.probe.to_string(),
                    format!("{:x}", masks[r.concept]),
                    r.rank.map_or_else(|| "none".into(), |k| k.to_string()),
                ]);
            }
            if id == "dnn" {
                dnn_rank = Some((rec.mean_rank(), rec.eligible()));
            }
        }
        report::write_csv(
            &self.path("planted.csv"),
            &self.prov.line(&format!("threshold={}", self.config.salient_threshold)),
            &["model_id", "probe", "mask_hex", "rank"],
            rows,
        )?;
        let limit = 2.0 * masks.len() as f64;
        Ok(dnn_rank.map(|(mean, eligible)| match mean {
            Some(m) => Check::new(
                "planted_rank",
                m <= limit,
                format!("mean rank {m} over {eligible} probe-concept pairs, limit {limit}"),
            ),
            None if eligible == 0 => Check::new("planted_rank", true, "no probe switches a planted concept"),
            None => Check::new("planted_rank", false, "a planted concept left the salient set"),
        }))
    }

    /// Layer-wise surrogate fit of the BNN around its mean network.
    pub fn surrogate(&self, splits: &Splits, bnn: &BnnModel) -> Result<(SurrogateFit, Check)> {
        let c = &self.config;
        let seed = self.seed(Stage::Surrogate);
        let mut idx: Vec<usize> = (0..splits.train.len()).collect();
        rng::shuffle(&mut rng::seeded(rng::derive(seed, 0)), &mut idx);
        idx.truncate(c.surrogate_samples);
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| splits.train.row(i).to_vec()).collect();
        let cfg = SurrogateFitConfig {
            draws: c.surrogate_draws,
            steps: c.surrogate_steps,
            learning_rate: c.surrogate_learning_rate,
            divergence_patience: DIVERGENCE_PATIENCE,
            seed: rng::derive(seed, 1),
        };
        let fit = fit_surrogate(bnn, &bnn.mean_model(), &xs, &cfg)?;
        report::write_plan(&self.path("surrogate_plan.csv"), &self.prov, &fit)?;
        report::write_fit_log(&self.path("surrogate_fit.csv"), &self.prov, &fit)?;
        let rising: Vec<usize> = fit
            .layers
            .iter()
            .filter(|l| l.kl_after > l.kl_before)
            .map(|l| l.layer)
            .collect();
        let check = Check::new(
            "surrogate_monotone",
            rising.is_empty(),
            if rising.is_empty() {
                "no layer ends above its starting KL".to_string()
            } else {
                format!("KL rose at layers {rising:?}")
            },
        );
        Ok((fit, check))
    }

    /// Order metrics of the trained models and order strengths of the
    /// three comparison pairs, written to `metrics.csv`.
    pub fn metrics(&self, splits: &Splits, cmp: &Comparisons) -> Result<Vec<MetricRow>> {
        let c = &self.config;
        let probes = self.probes(splits)?;
        let seed = self.seed(Stage::Noise);
        let n_probes = probes.test.len();
        let mut rows = Vec::new();
        let noise = NoiseSpec {
            variance: c.noise_variance,
            draws: c.noise_draws,
            seed: rng::derive(seed, 10),
        };
        let (dnn, bnn) = (&cmp.cmp2.0, &cmp.cmp1.1);
        let vk = order_variance_stability_noise(dnn, &probes.test, &noise)?;
        rows.extend(MetricRow::series("V_noise.dnn", &vk.variance, c.noise_draws, noise.seed));
        rows.extend(MetricRow::series("K_noise.dnn", &vk.stability, c.noise_draws, noise.seed));
        let weight_seed = rng::derive(seed, 11);
        let vk = order_variance_stability_bnn(bnn, &probes.test, c.weight_draws, weight_seed)?;
        rows.extend(MetricRow::series("V_bnn.bnn", &vk.variance, c.weight_draws, weight_seed));
        rows.extend(MetricRow::series("K_bnn.bnn", &vk.stability, c.weight_draws, weight_seed));
        let pairs = [("cmp1", &cmp.cmp1), ("cmp2", &cmp.cmp2), ("cmp3", &cmp.cmp3)];
        for (k, (name, (d, b))) in pairs.into_iter().enumerate() {
            let stream = 1 + k as u64;
            let ens = self.ensemble(b, stream)?;
            let dnn_s = order_strength(d, &probes.test)?;
            let bnn_s = order_strength(&ens, &probes.test)?;
            rows.extend(MetricRow::series(&format!("strength.{name}.dnn"), &dnn_s, n_probes, seed));
            rows.extend(MetricRow::series(
                &format!("strength.{name}.bnn"),
                &bnn_s,
                n_probes,
                rng::derive(seed, stream),
            ));
        }
        let orders: Vec<usize> = (1..=probes.active.len()).collect();
        let ens = self.ensemble(bnn, 4)?;
        let models: [(&str, &dyn Classifier, u64); 2] = [("dnn", dnn, seed), ("bnn", &ens, rng::derive(seed, 4))];
        let shared_label = probes.train.iter().any(|a| probes.test.iter().any(|b| a.label == b.label));
        // With too few probes the splits may share no class to compare.
        if shared_label {
            for (id, model, s) in models {
                let g = generalization_profile(model, &probes.train, &probes.test, &orders)?;
                let values: Vec<f64> = g.iter().map(|r| r.g).collect();
                rows.extend(MetricRow::series(&format!("g.{id}"), &values, n_probes, s));
            }
        }
        report::write_metrics(&self.path("metrics.csv"), &self.prov, &rows)?;
        Ok(rows)
    }

    /// The closed-form and Monte Carlo oracle suite.
    pub fn oracles(&self) -> Result<Check> {
        let seed = self.seed(Stage::Oracle);
        let checks = oracle_suite(self.config.oracle_draws, seed)?;
        report::write_oracles(&self.path("oracles.csv"), &self.prov, &checks)?;
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Ok(Check::new(
            "oracles",
            failed.is_empty(),
            format!("{} of {} passed{}", checks.len() - failed.len(), checks.len(), if failed.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failed.join(" "))
            }),
        ))
    }

    /// PGD robustness of the trained DNN, the BNN's mean network and the BNN
    /// on the test split.
    pub fn attack(&self, splits: &Splits, dnn: &MlpModel, bnn: &BnnModel) -> Result<Vec<RobustnessRow>> {
        let c = &self.config;
        let pgd = PgdConfig {
            epsilon: c.pgd_epsilon,
            steps: c.pgd_steps,
            step_size: c.pgd_step_size,
        };
        let seed = self.seed(Stage::Attack);
        let mean = bnn.mean_model();
        let results = [
            ("dnn", adversarial_accuracy(dnn, dnn, &splits.test, &pgd, seed)?),
            ("mean_dnn", adversarial_accuracy(&mean, &mean, &splits.test, &pgd, seed)?),
            ("bnn", bnn_adversarial_accuracy(bnn, &splits.test, &pgd, c.bnn_eval_samples, seed)?),
        ];
        let rows: Vec<RobustnessRow> = results
            .iter()
            .map(|(id, r)| RobustnessRow {
                model_id: id.to_string(),
                clean_accuracy: r.clean_accuracy,
                adversarial_accuracy: r.adversarial_accuracy,
                epsilon: pgd.epsilon,
                steps: pgd.steps,
            })
            .collect();
        report::write_robustness(&self.path("robustness.csv"), &self.prov, &rows)?;
        Ok(rows)
    }

    pub fn plot(&self) -> Result<Vec<PathBuf>> {
        emit_plots(&self.dir)
    }
}

/// Runs every stage in order. A failing stage leaves the outputs of earlier
/// stages in place next to a `failure.csv` naming it.
pub fn run_pipeline(config: ExperimentConfig) -> Result<Report> {
    let run = Run::create(config)?;
    let failure = run.path("failure.csv");
    if failure.exists() {
        fs::remove_file(&failure).map_err(|e| Error::io(&failure, e))?;
    }
    let splits = run.guarded("gen-data", || run.gen_data())?;
    let dnn = run.guarded("train-dnn", || run.train_dnn(&splits))?;
    let bnn = run.guarded("train-bnn", || run.train_bnn(&splits))?;
    let mut checks = run.guarded("interactions", || run.interactions(&splits, &dnn.model, &bnn.model))?;
    let (_, surrogate) = run.guarded("surrogate-fit", || run.surrogate(&splits, &bnn.model))?;
    checks.push(surrogate);
    let cmp = run.guarded("metrics", || {
        let cmp = run.comparisons(&dnn, &bnn)?;
        run.metrics(&splits, &cmp)?;
        Ok(cmp)
    })?;
    checks.push(Check::new(
        "comparison3_gap",
        !cmp.pairing.flagged,
        format!(
            "epochs dnn {} / bnn {}, gap {}",
            cmp.pairing.dnn_epoch, cmp.pairing.bnn_epoch, cmp.pairing.gap
        ),
    ));
    checks.push(run.guarded("oracles", || run.oracles())?);
    run.guarded("attack", || run.attack(&splits, &dnn.model, &bnn.model))?;
    run.guarded("plot", || run.plot())?;
    report::write_checks(&run.path("checks.csv"), &run.prov, &checks)?;
    Ok(Report { dir: run.dir, checks })
}
