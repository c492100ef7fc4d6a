//! Sequential training over a task list.
//!
//! Per task: embed, lasso-code the embedding against every layer's
//! dictionary, binarize to masks, then alternate blocks of gated weight
//! steps and straight-through prompt steps. Only after the training loop do
//! the accumulated masks, dictionary statistics and dictionaries change.

mod policy_gradient;
mod supervised;

use alloc::collections::BTreeMap;
use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use policy_gradient::{episodic_success, likelihood_ratio_grad, policy_gradient_step, softmax, Baseline, PgStats};
pub use supervised::{mse, regression_success, supervised_step};

use crate::dictionary::{dictionary_change, DictStats, LayerDictionary};
use crate::embedding::{embed_from_table, embed_hashed, embed_synthetic, TaskEmbedding};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{
    average_performance, capacity_usage, forgetting, generalization, similarity_matrix, PerformanceTable,
};
use crate::network::{gates_of, AccumulatedMask, Mask, MaskSet, MetaPolicy, PromptSet};
use crate::rng;
use crate::sparse_coding::{solve_lasso_lars, LassoProblem, SolverConfig};
use crate::tasks::{validate_sequence, Environment, TaskKind, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Theta,
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    #[serde(default = "default_slope")]
    pub negative_slope: f64,
}

fn default_slope() -> f64 {
    crate::network::DEFAULT_NEGATIVE_SLOPE
}

impl Architecture {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_widths.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_widths);
        w.push(self.output_dim);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBudget {
    /// Gated weight steps per block (`I_θ`).
    pub theta_steps_per_block: usize,
    /// Prompt steps per block (`I_α`); 0 keeps the lasso prompt.
    pub alpha_steps_per_block: usize,
    /// Update steps allotted to each task (`δ`).
    pub steps_per_task: usize,
    pub eval_interval: usize,
    pub success_threshold: f64,
    /// Supervised samples per step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    32
}

impl TrainBudget {
    fn block_len(&self, alpha_enabled: bool) -> usize {
        self.theta_steps_per_block + if alpha_enabled { self.alpha_steps_per_block } else { 0 }
    }

    /// Blocks needed to cover `δ` steps; the last one may be cut short.
    pub fn blocks_per_task(&self, alpha_enabled: bool) -> usize {
        self.steps_per_task.div_ceil(self.block_len(alpha_enabled).max(1))
    }

    fn phase_at(&self, step: usize, alpha_enabled: bool) -> Phase {
        let within = step % self.block_len(alpha_enabled).max(1);
        if within < self.theta_steps_per_block {
            Phase::Theta
        } else {
            Phase::Alpha
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Optimizer {
    pub theta_lr: f64,
    pub alpha_lr: f64,
    /// Moving-average rate of the policy-gradient reward baseline.
    #[serde(default = "default_baseline_decay")]
    pub baseline_decay: f64,
}

fn default_baseline_decay() -> f64 {
    0.1
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    #[serde(default)]
    pub freeze_dictionary: bool,
    #[serde(default)]
    pub freeze_alpha: bool,
    /// Dictionaries stop updating once this many tasks are complete.
    #[serde(default)]
    pub lazy_update_after: Option<usize>,
}

impl Ablation {
    fn updates_dictionary(&self, task_index: usize) -> bool {
        !self.freeze_dictionary && self.lazy_update_after.is_none_or(|n| task_index < n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    Hashed { seed: u64 },
    Synthetic { noise_scale: f64, seed: u64 },
    /// Pre-computed vectors keyed by task id (repeat suffix stripped).
    Table(BTreeMap<String, Vec<f64>>),
}

impl EmbeddingSource {
    pub fn embed(&self, task: &TaskSpec, m: usize) -> Result<TaskEmbedding> {
        match self {
            EmbeddingSource::Hashed { seed } => embed_hashed(&task.description.text, m, *seed),
            EmbeddingSource::Synthetic { noise_scale, seed } => {
                embed_synthetic(task.primitive, task.variant as u64, m, *noise_scale, *seed)
            }
            EmbeddingSource::Table(table) => embed_from_table(table, task.embedding_key(), m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub architecture: Architecture,
    pub embedding_dim: usize,
    pub lambda: f64,
    pub norm_bound: f64,
    pub dictionary_passes: usize,
    pub solver: SolverConfig,
    pub budget: TrainBudget,
    pub optimizer: Optimizer,
    pub ablation: Ablation,
    pub embedding: EmbeddingSource,
    pub seed: u64,
}

fn positive_finite(v: f64, field: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite and positive"))
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        let a = &self.architecture;
        if a.input_dim == 0 || a.output_dim == 0 {
            return Err(Error::invalid("architecture", "input and output dims must be positive"));
        }
        if a.hidden_widths.is_empty() || a.hidden_widths.contains(&0) {
            return Err(Error::invalid("architecture.hidden_widths", "need at least one non-empty hidden layer"));
        }
        if !a.negative_slope.is_finite() {
            return Err(Error::invalid("architecture.negative_slope", "must be finite"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim", "must be positive"));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::invalid("lambda", "must be finite and non-negative"));
        }
        positive_finite(self.norm_bound, "norm_bound")?;
        if self.dictionary_passes == 0 {
            return Err(Error::invalid("dictionary_passes", "must be positive"));
        }
        let b = &self.budget;
        if b.theta_steps_per_block == 0 {
            return Err(Error::invalid("budget.theta_steps_per_block", "must be positive"));
        }
        if b.steps_per_task == 0 || b.eval_interval == 0 || b.batch_size == 0 {
            return Err(Error::invalid(
                "budget",
                "steps_per_task, eval_interval and batch_size must be positive",
            ));
        }
        if !(b.success_threshold > 0.0 && b.success_threshold <= 1.0) {
            return Err(Error::invalid("budget.success_threshold", "must lie in (0, 1]"));
        }
        positive_finite(self.optimizer.theta_lr, "optimizer.theta_lr")?;
        positive_finite(self.optimizer.alpha_lr, "optimizer.alpha_lr")?;
        let d = self.optimizer.baseline_decay;
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::invalid("optimizer.baseline_decay", "must lie in (0, 1]"));
        }
        if let EmbeddingSource::Synthetic { noise_scale, .. } = self.embedding {
            if !noise_scale.is_finite() || noise_scale < 0.0 {
                return Err(Error::invalid("embedding.noise_scale", "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn alpha_enabled(&self) -> bool {
        !self.ablation.freeze_alpha && self.budget.alpha_steps_per_block > 0
    }
}

/// Everything that persists from one task to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub policy: MetaPolicy,
    pub dictionaries: Vec<LayerDictionary>,
    pub stats: Vec<DictStats>,
    pub accumulated: AccumulatedMask,
}

impl LearnerState {
    pub fn new(settings: &RunSettings) -> Result<Self> {
        settings.validate()?;
        let arch = &settings.architecture;
        let policy = MetaPolicy::new(
            &arch.widths(),
            arch.negative_slope,
            rng::derive_seed(settings.seed, "network", 0),
        )?;
        let mut dictionaries = Vec::with_capacity(arch.hidden_widths.len());
        let mut stats = Vec::with_capacity(arch.hidden_widths.len());
        for (l, &k) in arch.hidden_widths.iter().enumerate() {
            dictionaries.push(LayerDictionary::init(
                settings.embedding_dim,
                k,
                settings.norm_bound,
                rng::derive_seed(settings.seed, "dictionary", l as u64),
                l + 1,
            )?);
            stats.push(DictStats::zeros(settings.embedding_dim, k));
        }
        Ok(Self {
            policy,
            dictionaries,
            stats,
            accumulated: AccumulatedMask::empty(&arch.hidden_widths),
        })
    }

    /// Lasso prompt for `embedding` against the current dictionaries, plus
    /// whether every layer's solver converged.
    pub fn sparse_prompt(&self, embedding: &[f64], lambda: f64, solver: &SolverConfig) -> Result<(PromptSet, bool)> {
        let mut alphas = Vec::with_capacity(self.dictionaries.len());
        let mut converged = true;
        for dict in &self.dictionaries {
            let problem = LassoProblem::new(dict.atoms(), embedding, lambda)?;
            let sol = solve_lasso_lars(&problem, solver)?;
            converged &= sol.converged;
            alphas.push(sol.coefficients);
        }
        Ok((PromptSet::new(alphas), converged))
    }
}

/// Success rate of `task` under `masks`, on a fixed evaluation protocol.
pub fn evaluate(policy: &MetaPolicy, masks: &[Mask], task: &TaskSpec) -> Result<f64> {
    let gates = gates_of(masks);
    match &task.kind {
        TaskKind::Supervised(s) => {
            let (x, y) = s.eval_set();
            let out = policy.predict(&gates, &x)?;
            Ok(regression_success(&out, &y, s.margin))
        }
        TaskKind::Episodic(e) => {
            let env = Environment::new(&e.env)?;
            episodic_success(policy, &gates, &env, e.horizon)
        }
    }
}

/// Network outputs on the task's probe inputs (the evaluation set, or every
/// observation for episodic tasks).
pub fn probe_outputs(policy: &MetaPolicy, masks: &[Mask], task: &TaskSpec) -> Result<Matrix> {
    let gates = gates_of(masks);
    let x = match &task.kind {
        TaskKind::Supervised(s) => s.eval_set().0,
        TaskKind::Episodic(e) => {
            let env = Environment::new(&e.env)?;
            let d = policy.input_dim();
            let mut x = Matrix::zeros(env.observation_dim(), d);
            for s in 0..env.observation_dim() {
                x.row_mut(s).copy_from_slice(&env.observe(s, d));
            }
            x
        }
    };
    policy.predict(&gates, &x)
}

/// Hash of the exact bit patterns of a matrix.
pub fn digest(m: &Matrix) -> u64 {
    let mut bytes = Vec::with_capacity(m.as_slice().len() * 8);
    for v in m.as_slice() {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    rng::hash64(0, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Update steps taken within the task.
    pub step: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_index: usize,
    pub task_id: String,
    pub initial_prompt: Vec<Vec<f64>>,
    pub final_prompt: Vec<Vec<f64>>,
    pub initial_masks: MaskSet,
    pub final_masks: MaskSet,
    pub success_series: Vec<EvalPoint>,
    /// Step of the second consecutive evaluation at or above the threshold.
    pub steps_to_threshold: Option<usize>,
    pub steps_trained: usize,
    pub final_success: f64,
    /// Per hidden layer; all zero when the dictionaries were not updated.
    pub dictionary_change: Vec<f64>,
    pub capacity_usage: f64,
    pub lasso_converged: bool,
    pub probe_digest: u64,
}

/// Emitted while a sequence runs; enough to rebuild the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Eval {
        task: usize,
        /// Global step: `task · δ + step within task`.
        step: u64,
        success_rate: f64,
    },
    TaskEnd {
        task: usize,
        task_id: String,
        steps_trained: usize,
        steps_to_threshold: Option<usize>,
        final_success: f64,
        initial_masks: Vec<Vec<usize>>,
        final_masks: Vec<Vec<usize>>,
        capacity_usage: f64,
        dictionary_change: Vec<f64>,
        /// Probe digests of every learned task, in task order.
        probe_digests: Vec<u64>,
    },
    /// One column of the performance table: every task's success rate.
    Column { time: u64, success: Vec<f64> },
}

pub trait Observer {
    fn on_event(&mut self, event: &RunEvent);
}

impl Observer for () {
    fn on_event(&mut self, _: &RunEvent) {}
}

impl Observer for Vec<RunEvent> {
    fn on_event(&mut self, event: &RunEvent) {
        self.push(event.clone());
    }
}

fn indices(masks: &[Mask]) -> Vec<Vec<usize>> {
    masks.iter().map(Mask::active_indices).collect()
}

/// Trains one task. On error the learner state is restored to what it was
/// on entry.
pub fn run_task(
    state: &mut LearnerState,
    settings: &RunSettings,
    task: &TaskSpec,
    task_index: usize,
    observer: &mut dyn Observer,
) -> Result<TaskRecord> {
    let snapshot = state.clone();
    let result = train_task(state, settings, task, task_index, observer);
    if result.is_err() {
        *state = snapshot;
    }
    result
}

fn train_task(
    state: &mut LearnerState,
    settings: &RunSettings,
    task: &TaskSpec,
    task_index: usize,
    observer: &mut dyn Observer,
) -> Result<TaskRecord> {
    let arch = &settings.architecture;
    task.validate(arch.input_dim, arch.output_dim)?;
    let budget = &settings.budget;
    let delta = budget.steps_per_task;
    let alpha_enabled = settings.alpha_enabled();

    let embedding = settings.embedding.embed(task, settings.embedding_dim)?;
    let (mut prompts, lasso_converged) = state.sparse_prompt(&embedding.vector, settings.lambda, &settings.solver)?;
    prompts.trainable = alpha_enabled;
    let initial_prompt = prompts.alphas.clone();
    let initial_masks = prompts.masks();

    let mut data_rng = rng::stream(settings.seed, "task-data", task_index as u64);
    let env = match &task.kind {
        TaskKind::Episodic(e) => Some(Environment::new(&e.env)?),
        TaskKind::Supervised(_) => None,
    };
    let target = match &task.kind {
        TaskKind::Supervised(s) => Some(s.target()),
        TaskKind::Episodic(_) => None,
    };
    let mut baseline = Baseline::new(settings.optimizer.baseline_decay);

    let mut series = Vec::new();
    let mut streak = 0usize;
    let mut steps_to_threshold = None;
    let mut step = 0usize;
    loop {
        if step.is_multiple_of(budget.eval_interval) || step == delta {
            let success_rate = evaluate(&state.policy, &prompts.masks(), task)?;
            observer.on_event(&RunEvent::Eval {
                task: task_index,
                step: (task_index * delta + step) as u64,
                success_rate,
            });
            series.push(EvalPoint { step, success_rate });
            if success_rate >= budget.success_threshold {
                streak += 1;
                if streak >= 2 {
                    steps_to_threshold = Some(step);
                    break;
                }
            } else {
                streak = 0;
            }
        }
        if step == delta {
            break;
        }
        let phase = budget.phase_at(step, alpha_enabled);
        let lr = match phase {
            Phase::Theta => settings.optimizer.theta_lr,
            Phase::Alpha => settings.optimizer.alpha_lr,
        };
        match &task.kind {
            TaskKind::Supervised(_) => {
                let (x, y) = target
                    .as_ref()
                    .expect("supervised target")
                    .sample(&mut data_rng, budget.batch_size);
                supervised_step(&mut state.policy, &mut prompts, &state.accumulated, &x, &y, phase, lr)?;
            }
            TaskKind::Episodic(e) => {
                policy_gradient_step(
                    &mut state.policy,
                    &mut prompts,
                    &state.accumulated,
                    env.as_ref().expect("episodic env"),
                    e,
                    &mut baseline,
                    phase,
                    lr,
                    &mut data_rng,
                )?;
            }
        }
        step += 1;
    }

    let final_masks = prompts.masks();
    let final_success = series.last().map_or(0.0, |p| p.success_rate);
    let probe_digest = digest(&probe_outputs(&state.policy, &final_masks, task)?);

    // Training is over; only now do masks, statistics and dictionaries move.
    state.accumulated.accumulate(&final_masks)?;
    let update = settings.ablation.updates_dictionary(task_index);
    let mut changes = Vec::with_capacity(state.dictionaries.len());
    for ((dict, stats), alpha) in state
        .dictionaries
        .iter_mut()
        .zip(state.stats.iter_mut())
        .zip(&prompts.alphas)
    {
        stats.accumulate(alpha, &embedding.vector)?;
        if update {
            let before = dict.clone();
            dict.update(stats, settings.dictionary_passes)?;
            changes.push(dictionary_change(&before, dict)?);
        } else {
            changes.push(0.0);
        }
    }
    let capacity = capacity_usage(&state.accumulated, &arch.widths())?;

    Ok(TaskRecord {
        task_index,
        task_id: task.description.task_id.clone(),
        initial_prompt,
        final_prompt: prompts.alphas,
        initial_masks,
        final_masks,
        success_series: series,
        steps_to_threshold,
        steps_trained: step,
        final_success,
        dictionary_change: changes,
        capacity_usage: capacity,
        lasso_converged,
        probe_digest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task_ids: Vec<String>,
    pub steps_per_task: u64,
    pub performance: PerformanceTable,
    /// `P(t)` at each column of the performance table.
    pub average_performance: Vec<f64>,
    pub final_average_performance: f64,
    pub forgetting: f64,
    pub generalization: f64,
    pub steps_to_threshold: Vec<Option<usize>>,
    pub similarity: Vec<Vec<f64>>,
    pub capacity_usage: Vec<f64>,
    pub dictionary_change: Vec<Vec<f64>>,
    pub tasks: Vec<TaskRecord>,
    /// Probe digests of every task, taken after the last task.
    pub final_probe_digests: Vec<u64>,
}

impl RunReport {
    pub fn task_masks(&self) -> Vec<MaskSet> {
        self.tasks.iter().map(|t| t.final_masks.clone()).collect()
    }
}

/// Trains every task in order. After each task the performance table gains
/// a column: learned tasks are scored with their stored masks, the rest
/// with a zero-shot prompt from the current dictionaries.
pub fn run_sequence(
    settings: &RunSettings,
    tasks: &[TaskSpec],
    observer: &mut dyn Observer,
) -> Result<(RunReport, LearnerState)> {
    settings.validate()?;
    let arch = &settings.architecture;
    validate_sequence(tasks, arch.input_dim, arch.output_dim)?;
    let mut state = LearnerState::new(settings)?;
    let delta = settings.budget.steps_per_task as u64;
    let mut table = PerformanceTable::new(tasks.len(), delta);
    let mut records: Vec<TaskRecord> = Vec::with_capacity(tasks.len());

    for (t, task) in tasks.iter().enumerate() {
        let record = run_task(&mut state, settings, task, t, observer).map_err(|e| Error::Task {
            index: t,
            source: Box::new(e),
        })?;
        records.push(record);

        let wrap = |e: Error| Error::Task {
            index: t,
            source: Box::new(e),
        };
        let mut digests = Vec::with_capacity(records.len());
        for (r, spec) in records.iter().zip(tasks) {
            digests.push(digest(&probe_outputs(&state.policy, &r.final_masks, spec).map_err(wrap)?));
        }
        let mut column = Vec::with_capacity(tasks.len());
        for (i, spec) in tasks.iter().enumerate() {
            let p = if i <= t {
                evaluate(&state.policy, &records[i].final_masks, spec)
            } else {
                zero_shot(&state, settings, spec)
            };
            column.push(p.map_err(wrap)?);
        }
        let time = (t as u64 + 1) * delta;
        table.push_column(time, &column).map_err(wrap)?;

        let r = &records[t];
        observer.on_event(&RunEvent::TaskEnd {
            task: t,
            task_id: r.task_id.clone(),
            steps_trained: r.steps_trained,
            steps_to_threshold: r.steps_to_threshold,
            final_success: r.final_success,
            initial_masks: indices(&r.initial_masks),
            final_masks: indices(&r.final_masks),
            capacity_usage: r.capacity_usage,
            dictionary_change: r.dictionary_change.clone(),
            probe_digests: digests,
        });
        observer.on_event(&RunEvent::Column { time, success: column });
    }

    let report = build_report(tasks, table, records, &state)?;
    Ok((report, state))
}

fn zero_shot(state: &LearnerState, settings: &RunSettings, task: &TaskSpec) -> Result<f64> {
    let e = settings.embedding.embed(task, settings.embedding_dim)?;
    let (prompts, _) = state.sparse_prompt(&e.vector, settings.lambda, &settings.solver)?;
    evaluate(&state.policy, &prompts.masks(), task)
}

fn build_report(
    tasks: &[TaskSpec],
    table: PerformanceTable,
    records: Vec<TaskRecord>,
    state: &LearnerState,
) -> Result<RunReport> {
    let average: Vec<f64> = table
        .times
        .iter()
        .map(|&t| average_performance(&table, t))
        .collect::<Result<_>>()?;
    let steps: Vec<Option<usize>> = records.iter().map(|r| r.steps_to_threshold).collect();
    let as_u64: Vec<Option<u64>> = steps.iter().map(|s| s.map(|v| v as u64)).collect();
    let masks: Vec<MaskSet> = records.iter().map(|r| r.final_masks.clone()).collect();
    let mut final_probe_digests = Vec::with_capacity(records.len());
    for (r, spec) in records.iter().zip(tasks) {
        final_probe_digests.push(digest(&probe_outputs(&state.policy, &r.final_masks, spec)?));
    }
    Ok(RunReport {
        task_ids: records.iter().map(|r| r.task_id.clone()).collect(),
        steps_per_task: table.steps_per_task,
        final_average_performance: *average.last().unwrap_or(&0.0),
        forgetting: forgetting(&table)?,
        generalization: generalization(&as_u64, table.steps_per_task)?,
        average_performance: average,
        steps_to_threshold: steps,
        similarity: similarity_matrix(&masks)?,
        capacity_usage: records.iter().map(|r| r.capacity_usage).collect(),
        dictionary_change: records.iter().map(|r| r.dictionary_change.clone()).collect(),
        performance: table,
        tasks: records,
        final_probe_digests,
    })
}
