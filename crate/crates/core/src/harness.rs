//! Template-level top-K evaluation, fixed-fusion grid search, the end-to-end
//! pipeline, zero/few-shot experiments and latency measurement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapter::{train_adapter_on, AdapterParams};
use crate::backbone::{train_backbone, BackboneParams, EpochStats};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::graphio::{build_few_shot_split, build_zero_shot_split, Dataset, ReactionRecord};
use crate::retrieve::{predict_gnn_only, predict_topk, Fusion, RankedPrediction, RecordContext};
use crate::store::{build_stores, TemplateStore};

pub const DEFAULT_KS: [usize; 5] = [1, 3, 5, 10, 50];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKCounts {
    pub n_records: usize,
    /// Aligned with [`EvalReport::ks`].
    pub hits: Vec<usize>,
    pub accuracy: Vec<f64>,
}

impl TopKCounts {
    fn new(n_ks: usize) -> Self {
        Self {
            n_records: 0,
            hits: vec![0; n_ks],
            accuracy: vec![0.0; n_ks],
        }
    }

    fn add(&mut self, ks: &[usize], first_hit: Option<usize>) {
        self.n_records += 1;
        if let Some(r) = first_hit {
            for (h, &k) in self.hits.iter_mut().zip(ks) {
                if r < k {
                    *h += 1;
                }
            }
        }
    }

    fn finish(&mut self) {
        self.accuracy = self
            .hits
            .iter()
            .map(|&h| if self.n_records == 0 { 0.0 } else { h as f64 / self.n_records as f64 })
            .collect();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub overall: TopKCounts,
    pub per_class: BTreeMap<u8, TopKCounts>,
}

impl EvalReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        Some(self.overall.accuracy[i])
    }

    pub fn class_accuracy_at(&self, class: u8, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        Some(self.per_class.get(&class)?.accuracy[i])
    }

    pub fn table(&self) -> String {
        let mut s = String::from("scope     n");
        for k in &self.ks {
            s.push_str(&format!("   top-{k:<3}"));
        }
        s.push('\n');
        let mut row = |name: String, c: &TopKCounts| {
            s.push_str(&format!("{name:<7}{:>4}", c.n_records));
            for a in &c.accuracy {
                s.push_str(&format!("   {:>6.2}", 100.0 * a));
            }
            s.push('\n');
        };
        row("all".into(), &self.overall);
        for (c, counts) in &self.per_class {
            row(format!("class {c}"), counts);
        }
        s
    }
}

/// Position of the first ranked entry matching a labeled center of `truth`.
pub fn first_hit(pred: &RankedPrediction, truth: &ReactionRecord) -> Option<usize> {
    let centers: BTreeSet<_> = truth.centers().into_iter().collect();
    pred.entries
        .iter()
        .position(|e| centers.contains(&(e.site, e.template)))
}

/// A record is a top-K hit when any of its `(site, template)` centers is among
/// the first K ranked entries.
pub fn evaluate_topk(preds: &[RankedPrediction], truth: &Dataset, ks: &[usize]) -> Result<EvalReport> {
    if preds.len() != truth.len() {
        return Err(Error::Misaligned(format!(
            "{} predictions for {} records",
            preds.len(),
            truth.len()
        )));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut overall = TopKCounts::new(ks.len());
    let mut per_class: BTreeMap<u8, TopKCounts> = BTreeMap::new();
    for (p, r) in preds.iter().zip(&truth.records) {
        let hit = first_hit(p, r);
        overall.add(&ks, hit);
        per_class
            .entry(r.reaction_class)
            .or_insert_with(|| TopKCounts::new(ks.len()))
            .add(&ks, hit);
    }
    overall.finish();
    per_class.values_mut().for_each(TopKCounts::finish);
    Ok(EvalReport {
        ks,
        overall,
        per_class,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub temperature: f64,
    pub lambda: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_temperature: f64,
    pub best_lambda: f64,
    pub best_loss: f64,
    pub table: Vec<GridRow>,
}

impl GridResult {
    pub fn fusion(&self) -> Fusion<'static, f64> {
        Fusion::Fixed {
            temperature: self.best_temperature,
            lambda: self.best_lambda,
        }
    }

    pub fn table_text(&self) -> String {
        let mut s = String::from("    T   lambda   val loss\n");
        for r in &self.table {
            s.push_str(&format!("{:>5}   {:>6}   {:.6}\n", r.temperature, r.lambda, r.loss));
        }
        s.push_str(&format!(
            "best: T = {}, lambda = {} (loss {:.6})\n",
            self.best_temperature, self.best_lambda, self.best_loss
        ));
        s
    }
}

pub fn mean_fused_loss(contexts: &[RecordContext<f64>], fusion: &Fusion<'_, f64>) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    let mut total = 0.0;
    for c in contexts {
        total += c.fused_loss(fusion)?;
    }
    Ok(total / contexts.len() as f64)
}

/// Validation loss for every `(T, λ)` pair; the minimum wins, ties going to
/// the smaller T and then the smaller λ.
pub fn grid_search_contexts(
    contexts: &[RecordContext<f64>],
    temperatures: &[f64],
    lambdas: &[f64],
) -> Result<GridResult> {
    if temperatures.is_empty() || lambdas.is_empty() {
        return Err(Error::Config("grids must be nonempty".into()));
    }
    let mut table = Vec::with_capacity(temperatures.len() * lambdas.len());
    for &temperature in temperatures {
        for &lambda in lambdas {
            let loss = mean_fused_loss(contexts, &Fusion::Fixed { temperature, lambda })?;
            table.push(GridRow {
                temperature,
                lambda,
                loss,
            });
        }
    }
    let best = *table
        .iter()
        .min_by(|a, b| {
            a.loss
                .total_cmp(&b.loss)
                .then(a.temperature.total_cmp(&b.temperature))
                .then(a.lambda.total_cmp(&b.lambda))
        })
        .expect("nonempty grid");
    Ok(GridResult {
        best_temperature: best.temperature,
        best_lambda: best.lambda,
        best_loss: best.loss,
        table,
    })
}

pub fn build_contexts(
    d: &Dataset,
    backbone: &BackboneParams<f64>,
    atom_store: &TemplateStore,
    bond_store: &TemplateStore,
    k: usize,
) -> Result<Vec<RecordContext<f64>>> {
    d.records
        .iter()
        .map(|r| RecordContext::build(r, backbone, atom_store, bond_store, k))
        .collect()
}

pub fn grid_search_fixed(
    val: &Dataset,
    backbone: &BackboneParams<f64>,
    atom_store: &TemplateStore,
    bond_store: &TemplateStore,
    k: usize,
    temperatures: &[f64],
    lambdas: &[f64],
) -> Result<GridResult> {
    let contexts = build_contexts(val, backbone, atom_store, bond_store, k)?;
    grid_search_contexts(&contexts, temperatures, lambdas)
}

pub fn predict_contexts(
    contexts: &[RecordContext<f64>],
    fusion: &Fusion<'_, f64>,
    top_n: usize,
) -> Result<Vec<RankedPrediction>> {
    contexts.iter().map(|c| c.predict(fusion, top_n)).collect()
}

/// Every trained artifact of one run.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub backbone: BackboneParams<f64>,
    pub backbone_history: Vec<EpochStats>,
    pub atom_store: TemplateStore,
    pub bond_store: TemplateStore,
    pub grid: GridResult,
    pub adapter: AdapterParams<f64>,
    pub adapter_losses: Vec<f64>,
}

/// Top-K reports of the three inference modes on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub gnn: EvalReport,
    pub fixed: EvalReport,
    pub adaptive: EvalReport,
}

/// Trains the backbone, builds both stores, runs the fixed-fusion grid search
/// and trains the adapter on `val`.
pub fn run_pipeline(train: &Dataset, val: &Dataset, cfg: &PipelineConfig) -> Result<Pipeline> {
    let outcome = train_backbone::<f64>(train, val, &cfg.backbone)?;
    let (atom_store, bond_store) = build_stores(train, &outcome.params, &cfg.index)?;
    let contexts = build_contexts(val, &outcome.params, &atom_store, &bond_store, cfg.k)?;
    let grid = grid_search_contexts(&contexts, &cfg.grid.temperatures, &cfg.grid.lambdas)?;
    let mut adapter_cfg = cfg.adapter.clone();
    adapter_cfg.k = cfg.k;
    let adapter = train_adapter_on(&contexts, outcome.params.config.hidden, &adapter_cfg)?;
    Ok(Pipeline {
        backbone: outcome.params,
        backbone_history: outcome.history,
        atom_store,
        bond_store,
        grid,
        adapter: adapter.params,
        adapter_losses: adapter.losses,
    })
}

impl Pipeline {
    pub fn contexts(&self, d: &Dataset, k: usize) -> Result<Vec<RecordContext<f64>>> {
        build_contexts(d, &self.backbone, &self.atom_store, &self.bond_store, k)
    }

    pub fn evaluate(&self, d: &Dataset, k: usize, top_n: usize, ks: &[usize]) -> Result<Comparison> {
        let contexts = self.contexts(d, k)?;
        let gnn: Vec<_> = contexts.iter().map(|c| c.predict_gnn_only(top_n)).collect();
        let fixed = predict_contexts(&contexts, &self.grid.fusion(), top_n)?;
        let adaptive = predict_contexts(&contexts, &Fusion::Adaptive(&self.adapter), top_n)?;
        Ok(Comparison {
            gnn: evaluate_topk(&gnn, d, ks)?,
            fixed: evaluate_topk(&fixed, d, ks)?,
            adaptive: evaluate_topk(&adaptive, d, ks)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassComparison {
    pub n_records: usize,
    pub gnn_top5: f64,
    pub gnn_top10: f64,
    pub fused_top5: f64,
    pub fused_top10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// 0 is zero-shot.
    pub keep_fraction: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub gnn: EvalReport,
    pub fused: EvalReport,
    pub held: BTreeMap<u8, ClassComparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotReport {
    pub held_classes: BTreeSet<u8>,
    pub regimes: Vec<RegimeReport>,
}

impl FewShotReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        for r in &self.regimes {
            s.push_str(&format!(
                "keep {:.2} (train {}, val {})\nclass     n   gnn@5  fused@5  gnn@10  fused@10\n",
                r.keep_fraction, r.n_train, r.n_val
            ));
            for (c, x) in &r.held {
                s.push_str(&format!(
                    "{c:>5} {:>5}  {:>6.2}   {:>6.2}  {:>6.2}    {:>6.2}\n",
                    x.n_records,
                    100.0 * x.gnn_top5,
                    100.0 * x.fused_top5,
                    100.0 * x.gnn_top10,
                    100.0 * x.fused_top10
                ));
            }
        }
        s
    }
}

/// For each keep fraction, filters the held classes out of train and
/// validation (fraction 0 removes them entirely), reruns the pipeline and
/// compares classifier-only against adapter fusion on the held classes of
/// `test`.
pub fn run_fewshot_experiment(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    held_classes: &BTreeSet<u8>,
    keep_fractions: &[f64],
    cfg: &PipelineConfig,
) -> Result<FewShotReport> {
    let ks = [5, 10];
    let mut regimes = Vec::with_capacity(keep_fractions.len());
    for &f in keep_fractions {
        let split = |d: &Dataset| {
            if f <= 0.0 {
                build_zero_shot_split(d, held_classes)
            } else {
                build_few_shot_split(d, held_classes, f, cfg.backbone.seed)
            }
        };
        let (tr, va) = (split(train), split(val));
        let pipeline = run_pipeline(&tr, &va, cfg)?;
        let contexts = pipeline.contexts(test, cfg.k)?;
        let gnn_preds: Vec<_> = contexts.iter().map(|c| c.predict_gnn_only(cfg.top_n)).collect();
        let fused_preds = predict_contexts(&contexts, &Fusion::Adaptive(&pipeline.adapter), cfg.top_n)?;
        let gnn = evaluate_topk(&gnn_preds, test, &ks)?;
        let fused = evaluate_topk(&fused_preds, test, &ks)?;
        let held = held_classes
            .iter()
            .filter_map(|&c| {
                let g = gnn.per_class.get(&c)?;
                let a = fused.per_class.get(&c)?;
                Some((
                    c,
                    ClassComparison {
                        n_records: g.n_records,
                        gnn_top5: g.accuracy[0],
                        gnn_top10: g.accuracy[1],
                        fused_top5: a.accuracy[0],
                        fused_top10: a.accuracy[1],
                    },
                ))
            })
            .collect();
        regimes.push(RegimeReport {
            keep_fraction: f,
            n_train: tr.len(),
            n_val: va.len(),
            gnn,
            fused,
            held,
        });
    }
    Ok(FewShotReport {
        held_classes: held_classes.clone(),
        regimes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub pipeline: String,
    /// Mean over runs of the per-record latency, in milliseconds.
    pub mean_ms: f64,
    /// Population standard deviation across runs.
    pub std_ms: f64,
    pub n_runs: usize,
    pub fingerprint: String,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:.2} ± {:.2} ms", self.pipeline, self.mean_ms, self.std_ms)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-record wall-clock latency of the fused pipeline (encode, retrieve,
/// adapter, rank) and of the classifier-only pipeline, averaged within each
/// run, then mean ± std across `n_runs`. One untimed warm-up pass precedes
/// the runs.
pub fn bench_latency(
    test: &Dataset,
    backbone: &BackboneParams<f64>,
    atom_store: &TemplateStore,
    bond_store: &TemplateStore,
    adapter: &AdapterParams<f64>,
    k: usize,
    top_n: usize,
    n_runs: usize,
) -> Result<(BenchReport, BenchReport)> {
    if test.is_empty() || n_runs == 0 {
        return Err(Error::Config("benchmark needs records and at least one run".into()));
    }
    let fusion = Fusion::Adaptive(adapter);
    let fused_pass = || -> Result<()> {
        for r in &test.records {
            std::hint::black_box(predict_topk(r, backbone, atom_store, bond_store, &fusion, k, top_n)?);
        }
        Ok(())
    };
    let gnn_pass = || -> Result<()> {
        for r in &test.records {
            std::hint::black_box(predict_gnn_only(r, backbone, top_n)?);
        }
        Ok(())
    };
    gnn_pass()?;
    fused_pass()?;
    let per_record = |start: Instant| start.elapsed().as_secs_f64() * 1e3 / test.len() as f64;
    let (mut fused_ms, mut gnn_ms) = (Vec::with_capacity(n_runs), Vec::with_capacity(n_runs));
    for _ in 0..n_runs {
        let t = Instant::now();
        gnn_pass()?;
        gnn_ms.push(per_record(t));
        let t = Instant::now();
        fused_pass()?;
        fused_ms.push(per_record(t));
    }
    let c = &backbone.config;
    let fingerprint = format!(
        "layers={} hidden={} k={} top_n={} atom_store={} bond_store={} index={:?} records={}",
        c.layers,
        c.hidden,
        k,
        top_n,
        atom_store.len(),
        bond_store.len(),
        atom_store.index.kind(),
        test.len()
    );
    let report = |name: &str, xs: &[f64]| {
        let (mean_ms, std_ms) = mean_std(xs);
        BenchReport {
            pipeline: name.into(),
            mean_ms,
            std_ms,
            n_runs,
            fingerprint: fingerprint.clone(),
        }
    };
    Ok((report("with KNN", &fused_ms), report("without KNN", &gnn_ms)))
}
