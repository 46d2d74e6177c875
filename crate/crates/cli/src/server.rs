//! Local HTTP JSON service behind the explorer and judgement console.

use std::sync::Arc;

use abcde_core::impact::{
    group_slice, impact_report, summarize_slice, GroupSummary, ImpactReport, SliceSummary,
};
use abcde_core::pairs::{CategoryTotals, JudgementTask, WeightedPair};
use abcde_core::quality::{Judgement, QualityReport};
use abcde_core::sampler::{assign_clocks, sample_without_replacement, SampledItem};
use abcde_core::{Filter, Metric};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use crate::error::{CliError, CliResult};
use crate::pipeline::{
    append_judgements, load_item_sample, load_judgements, load_task_pairs, load_tasks,
    load_input, pending_tasks, quality_from, PairSampleMeta, IMPACT, PAIR_META, TASKS, TOP_N,
};
use crate::run::RunDir;

/// Groups returned by a slice query.
pub const MAX_GROUPS: usize = 20;
/// Example items returned by a slice query.
pub const MAX_EXAMPLES: usize = 10;

struct Judging {
    tasks: Vec<JudgementTask>,
    pairs: Vec<WeightedPair>,
    totals: CategoryTotals,
}

pub struct AppState {
    run: RunDir,
    items: Vec<SampledItem>,
    seed: u64,
    impact: Option<ImpactReport>,
    judging: Option<Judging>,
    log: RwLock<Vec<Judgement>>,
}

impl AppState {
    /// Loads everything the service needs from a run with an item sample.
    pub fn load(run: RunDir) -> CliResult<Self> {
        let (items, meta) = load_item_sample(&run)?;
        let impact = if run.has_artifact(IMPACT)? {
            Some(run.read_json(IMPACT)?)
        } else if let Some(recorded) = run.manifest()?.dataset {
            let (ds, _) = load_input(&recorded.path)?;
            Some(impact_report(&ds, TOP_N))
        } else {
            None
        };
        let judging = if run.has_artifact(TASKS)? {
            let meta: PairSampleMeta = run.read_json(PAIR_META)?;
            Some(Judging {
                tasks: load_tasks(&run)?,
                pairs: load_task_pairs(&run)?,
                totals: meta.totals,
            })
        } else {
            None
        };
        let log = load_judgements(&run)?;
        Ok(Self {
            run,
            items,
            seed: meta.seed,
            impact,
            judging,
            log: RwLock::new(log),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/impact", get(impact))
        .route("/api/slice", get(slice))
        .route("/api/tasks/next", get(next_task))
        .route("/api/judgements", post(judge))
        .route("/api/quality", get(quality))
        .with_state(state)
}

pub async fn serve(run: RunDir, port: u16) -> CliResult<()> {
    let state = Arc::new(AppState::load(run)?);
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::io(std::path::Path::new(&addr.to_string()), e))?;
    axum::serve(listener, router(state))
        .await
        .map_err(|e| CliError::io(std::path::Path::new(&addr.to_string()), e))
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

async fn impact(State(state): State<Arc<AppState>>) -> Result<Json<ImpactReport>, ApiError> {
    state.impact.clone().map(Json).ok_or_else(|| {
        ApiError(
            StatusCode::NOT_FOUND,
            "no impact report and no dataset recorded in this run".to_owned(),
        )
    })
}

#[derive(Debug, Default, Deserialize)]
pub struct SliceQuery {
    pub filter: Option<String>,
    pub group_by: Option<String>,
    pub metric: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceResponse {
    pub filter: String,
    pub metric: Metric,
    #[serde(flatten)]
    pub summary: SliceSummary,
    pub groups: Vec<GroupSummary>,
    pub examples: Vec<SampledItem>,
}

/// Answers a slice query over an item sample.
pub fn slice_view(items: &[SampledItem], query: &SliceQuery, seed: u64) -> abcde_core::Result<SliceResponse> {
    let filter = match query.filter.as_deref() {
        Some(expr) => Filter::parse(expr)?,
        None => Filter::all(),
    };
    let metric = match query.metric.as_deref() {
        Some(m) => m.parse().map_err(|reason| abcde_core::Error::InvalidFilter {
            expr: m.to_owned(),
            reason,
        })?,
        None => Metric::Jd,
    };
    let in_slice = |s: &SampledItem| filter.matches(&s.attributes);
    let summary = summarize_slice(items, in_slice)?;
    let groups = match query.group_by.as_deref().filter(|g| !g.is_empty()) {
        Some(attr) => {
            let mut g = group_slice(items, in_slice, attr, metric)?;
            g.truncate(MAX_GROUPS);
            g
        }
        None => Vec::new(),
    };
    let members: Vec<(String, f64)> = items
        .iter()
        .filter(|s| in_slice(s))
        .map(|s| (s.item_id.clone(), s.importance_weight))
        .collect();
    let picked = sample_without_replacement(assign_clocks(&members, seed)?, MAX_EXAMPLES);
    let examples = picked
        .iter()
        .filter_map(|id| items.iter().find(|s| &s.item_id == id).cloned())
        .collect();
    Ok(SliceResponse {
        filter: filter.to_string(),
        metric,
        summary,
        groups,
        examples,
    })
}

async fn slice(
    State(state): State<Arc<AppState>>,
    Query(query): Query<SliceQuery>,
) -> Result<Json<SliceResponse>, ApiError> {
    slice_view(&state.items, &query, state.seed)
        .map(Json)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextTask {
    pub task: JudgementTask,
    /// Tasks without a verdict, this one included.
    pub remaining: usize,
    pub total: usize,
}

fn judging(state: &AppState) -> Result<&Judging, ApiError> {
    state
        .judging
        .as_ref()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "no tasks exported in this run".to_owned()))
}

async fn next_task(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let judging = judging(&state)?;
    let log = state.log.read().await;
    let pending = pending_tasks(&judging.tasks, &log);
    Ok(match pending.first() {
        None => StatusCode::NO_CONTENT.into_response(),
        Some(task) => Json(NextTask {
            task: (*task).clone(),
            remaining: pending.len(),
            total: judging.tasks.len(),
        })
        .into_response(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgementAck {
    pub task_id: String,
    pub overwritten: bool,
    pub remaining: usize,
}

async fn judge(
    State(state): State<Arc<AppState>>,
    Json(judgement): Json<Judgement>,
) -> Result<Json<JudgementAck>, ApiError> {
    let judging = judging(&state)?;
    if !judging.tasks.iter().any(|t| t.task_id == judgement.task_id) {
        return Err(ApiError(
            StatusCode::NOT_FOUND,
            CliError::UnknownTask(judgement.task_id).to_string(),
        ));
    }
    let mut log = state.log.write().await;
    let summary = append_judgements(&state.run, &judging.tasks, std::slice::from_ref(&judgement))?;
    log.push(judgement.clone());
    Ok(Json(JudgementAck {
        task_id: judgement.task_id,
        overwritten: summary.overwritten > 0,
        remaining: pending_tasks(&judging.tasks, &log).len(),
    }))
}

async fn quality(State(state): State<Arc<AppState>>) -> Result<Json<QualityReport>, ApiError> {
    let judging = judging(&state)?;
    let log = state.log.read().await;
    Ok(Json(quality_from(&judging.pairs, &log, &judging.totals)))
}

