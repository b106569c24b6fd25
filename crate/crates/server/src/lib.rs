//! HTTP session API: configure a scan, simulate, reconstruct, and fetch
//! artifacts. One operator session lives in memory; compute jobs run one at
//! a time and are polled by id.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use nfsar::config::{parse_json, ConfigError, NoiseConfig, OutputConfig, PatternConfig, ReconConfig, RunConfig, SceneConfig, CONFIG_VERSION};
use nfsar::geometry::{aperture_extent, synthesize_aperture, AntennaArray, PatternSpec};
use nfsar::io;
use nfsar::metrics::psf_report;
use nfsar::pipeline::{self, ApertureInfo, Prepared, PsfRow};
use nfsar::recon::ImageVolume;
use nfsar::simulate::BeatCube;
use nfsar::waveform::{derive_waveform, resolution, sampling_bounds, WaveformParams};
use nfsar::Error;

/// Error body: `{"error": message, "field": json path}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub field: Option<String>,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, field: None, message: message.into() }
    }

    fn validation(e: ConfigError) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, field: Some(e.path), message: e.message }
    }

    fn from_core(prefix: &str, e: &Error) -> Self {
        match e {
            Error::GeometryMismatch(_) | Error::NonUniformAperture(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            e if e.is_validation() => ApiError::validation(ConfigError::from_error(prefix, e)),
            e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "field": self.field}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Pattern body: a pattern description plus the nominal aperture height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternBody {
    #[serde(flatten)]
    pub pattern: PatternConfig,
    #[serde(default)]
    pub aperture_z_m: f64,
}

/// Optional body of `POST /session/simulate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateBody {
    pub pathloss: bool,
    pub noise: Option<NoiseConfig>,
    pub mult_to_mono_zref_m: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct Artifact<T> {
    value: Arc<T>,
    /// Input revision the artifact was computed from.
    revision: u64,
}

/// In-memory session: the four configuration stages and derived artifacts.
#[derive(Debug, Clone)]
pub struct Session {
    pub waveform: WaveformParams,
    pub array: AntennaArray,
    pub pattern: PatternBody,
    pub scene: SceneConfig,
    pub simulation: SimulateBody,
    /// Incremented by every configuration change.
    revision: u64,
    cube: Option<Artifact<BeatCube>>,
    image: Option<Artifact<ImageVolume>>,
}

impl Default for Session {
    fn default() -> Self {
        Session {
            waveform: WaveformParams::from_band(77e9, 4e9, 64),
            array: AntennaArray::monostatic(),
            pattern: PatternBody {
                pattern: PatternConfig::Rectilinear(PatternSpec { dx_m: 1e-3, dy_m: 1e-3, nx: 32, ny: 32, ..PatternSpec::default() }),
                aperture_z_m: 0.0,
            },
            scene: SceneConfig::Points { points: vec![nfsar::config::PointConfig { position_m: [0.0, 0.0, 0.5], refl_re: 1.0, refl_im: 0.0 }] },
            simulation: SimulateBody::default(),
            revision: 0,
            cube: None,
            image: None,
        }
    }
}

impl Session {
    /// The equivalent command-line configuration.
    pub fn run_config(&self, reconstruct: Option<ReconConfig>) -> RunConfig {
        RunConfig {
            version: CONFIG_VERSION,
            waveform: self.waveform,
            array: self.array.clone(),
            pattern: self.pattern.pattern.clone(),
            aperture_z_m: self.pattern.aperture_z_m,
            scene: self.scene.clone(),
            pathloss: self.simulation.pathloss,
            noise: self.simulation.noise,
            mult_to_mono_zref_m: self.simulation.mult_to_mono_zref_m,
            reconstruct,
            psf: None,
            outputs: OutputConfig::default(),
            seed: self.simulation.seed,
            base_dir: PathBuf::from("."),
        }
    }

    fn touch(&mut self) {
        self.revision += 1;
    }

    fn cube_stale(&self) -> bool {
        self.cube.as_ref().is_some_and(|c| c.revision != self.revision)
    }

    fn image_stale(&self) -> bool {
        self.image.as_ref().is_some_and(|c| c.revision != self.revision)
    }

    fn stages(&self) -> Value {
        json!({
            "revision": self.revision,
            "beatSignal": {"computed": self.cube.is_some(), "stale": self.cube_stale()},
            "image": {"computed": self.image.is_some(), "stale": self.image_stale()},
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: u64,
    pub kind: &'static str,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

#[derive(Clone, Default)]
pub struct AppState {
    session: Arc<Mutex<Session>>,
    jobs: Arc<Mutex<HashMap<u64, Job>>>,
    next_job: Arc<AtomicU64>,
    compute: Arc<tokio::sync::Mutex<()>>,
}

impl AppState {
    pub fn new() -> Self {
        AppState::default()
    }

    fn session(&self) -> std::sync::MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn set_job(&self, id: u64, f: impl FnOnce(&mut Job)) {
        if let Some(j) = self.jobs.lock().unwrap_or_else(|p| p.into_inner()).get_mut(&id) {
            f(j);
        }
    }

    /// Queues blocking work behind the compute lock and returns its job id.
    fn spawn_job<F>(&self, kind: &'static str, work: F) -> u64
    where
        F: FnOnce(&AppState) -> ApiResult<Value> + Send + 'static,
    {
        let id = self.next_job.fetch_add(1, Ordering::SeqCst) + 1;
        self.jobs
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, Job { id, kind, state: JobState::Queued, result: None, error: None });
        let state = self.clone();
        tokio::spawn(async move {
            let _guard = state.compute.lock().await;
            state.set_job(id, |j| j.state = JobState::Running);
            let inner = state.clone();
            let outcome = tokio::task::spawn_blocking(move || work(&inner))
                .await
                .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("job panicked: {e}"))));
            state.set_job(id, |j| match outcome {
                Ok(v) => {
                    j.state = JobState::Done;
                    j.result = Some(v);
                }
                Err(e) => {
                    j.state = JobState::Failed;
                    j.error = Some(json!({"status": e.status.as_u16(), "error": e.message, "field": e.field}));
                }
            });
        });
        id
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/session/waveform", put(put_waveform))
        .route("/session/array", put(put_array))
        .route("/session/pattern", put(put_pattern))
        .route("/session/scene", put(put_scene))
        .route("/session/simulate", post(post_simulate))
        .route("/session/reconstruct", post(post_reconstruct))
        .route("/session/save", post(post_save))
        .route("/jobs/:id", get(get_job))
        .route("/derived", get(get_derived))
        .route("/artifacts/pattern.csv", get(get_pattern_csv))
        .route("/artifacts/image-slice", get(get_image_slice))
        .route("/artifacts/image", get(get_image))
        .route("/artifacts/cube", get(get_cube))
        .route("/artifacts/psf.csv", get(get_psf_csv))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new())).await
}

fn parse<T: serde::de::DeserializeOwned>(body: &str, prefix: &str) -> ApiResult<T> {
    let text = if body.trim().is_empty() { "{}" } else { body };
    parse_json(text).map_err(|e| {
        ApiError::validation(ConfigError::at(if e.path.is_empty() { prefix.to_string() } else { format!("{prefix}.{}", e.path) }, e.message))
    })
}

async fn get_session(State(st): State<AppState>) -> Json<Value> {
    let s = st.session();
    Json(json!({
        "waveform": s.waveform,
        "array": s.array,
        "pattern": s.pattern,
        "scene": s.scene,
        "simulation": s.simulation,
        "stages": s.stages(),
    }))
}

async fn put_waveform(State(st): State<AppState>, body: String) -> ApiResult<Json<Value>> {
    let w: WaveformParams = parse(&body, "waveform")?;
    derive_waveform(&w).map_err(|e| ApiError::from_core("waveform", &e))?;
    let mut s = st.session();
    s.waveform = w;
    s.touch();
    Ok(Json(s.stages()))
}

async fn put_array(State(st): State<AppState>, body: String) -> ApiResult<Json<Value>> {
    let a: AntennaArray = parse(&body, "array")?;
    a.validate().map_err(|e| ApiError::from_core("array", &e))?;
    let mut s = st.session();
    s.array = a;
    s.touch();
    Ok(Json(s.stages()))
}

async fn put_pattern(State(st): State<AppState>, body: String) -> ApiResult<Json<Value>> {
    let p: PatternBody = parse(&body, "pattern")?;
    p.pattern.build().map_err(|e| ApiError::from_core("pattern", &e))?;
    if !p.aperture_z_m.is_finite() {
        return Err(ApiError::validation(ConfigError::at("pattern.aperture_z_m", "must be finite")));
    }
    let mut s = st.session();
    s.pattern = p;
    s.touch();
    Ok(Json(s.stages()))
}

async fn put_scene(State(st): State<AppState>, body: String) -> ApiResult<Json<Value>> {
    let sc: SceneConfig = parse(&body, "scene")?;
    let seed = st.session().simulation.seed;
    sc.build(std::path::Path::new("."), seed).map_err(|e| ApiError::from_core("scene", &e))?;
    let mut s = st.session();
    s.scene = sc;
    s.touch();
    Ok(Json(s.stages()))
}

fn accepted(id: u64) -> Response {
    (StatusCode::ACCEPTED, [(header::LOCATION, format!("/jobs/{id}"))], Json(json!({"job_id": id, "poll": format!("/jobs/{id}")}))).into_response()
}

async fn post_simulate(State(st): State<AppState>, body: String) -> ApiResult<Response> {
    let sim: SimulateBody = parse(&body, "simulate")?;
    let (cfg, revision) = {
        let mut s = st.session();
        if sim != s.simulation {
            s.simulation = sim;
            s.touch();
        }
        (s.run_config(None), s.revision)
    };
    cfg.validate().map_err(ApiError::validation)?;
    let id = st.spawn_job("simulate", move |st| {
        let prep: Prepared = pipeline::prepare(&cfg).map_err(|e| ApiError::from_core("", &e))?;
        let cube = pipeline::simulate_config(&cfg, &prep).map_err(|e| ApiError::from_core("", &e))?;
        let summary = json!({"poses": cube.num_poses(), "Nk": cube.waveform.nk(), "revision": revision});
        let mut s = st.session();
        if s.revision == revision {
            s.cube = Some(Artifact { value: Arc::new(cube), revision });
            s.image = None;
        }
        Ok(summary)
    });
    Ok(accepted(id))
}

async fn post_reconstruct(State(st): State<AppState>, body: String) -> ApiResult<Response> {
    let rc: ReconConfig = parse(&body, "reconstruct")?;
    rc.grid.validate().map_err(|e| ApiError::from_core("", &e))?;
    let (cube, ap) = {
        let s = st.session();
        let mode = s.pattern.pattern.mode();
        if !rc.algorithm.accepts(mode) {
            return Err(ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                field: Some("algorithm".into()),
                message: format!("{} cannot reconstruct a {mode:?} aperture", rc.algorithm),
            });
        }
        let cube = match &s.cube {
            None => return Err(ApiError::new(StatusCode::CONFLICT, "no beat signal has been computed")),
            Some(_) if s.cube_stale() => return Err(ApiError::new(StatusCode::CONFLICT, "beat signal is stale; simulate again")),
            Some(c) => c.clone(),
        };
        (cube, ApertureInfo::of(&s.pattern.pattern, s.pattern.aperture_z_m))
    };
    let id = st.spawn_job("reconstruct", move |st| {
        let img = pipeline::reconstruct(&cube.value, &rc, &ap).map_err(|e| ApiError::from_core("", &e))?;
        let idx = img.argmax();
        let summary = json!({
            "algorithm": rc.algorithm,
            "shape": img.shape(),
            "time_s": img.meta.time_s,
            "peak_m": img.position(idx),
            "peakIndex": idx,
        });
        let mut s = st.session();
        if s.revision == cube.revision {
            s.image = Some(Artifact { value: Arc::new(img), revision: cube.revision });
        }
        Ok(summary)
    });
    Ok(accepted(id))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveBody {
    dir: PathBuf,
}

async fn post_save(State(st): State<AppState>, body: String) -> ApiResult<Json<Value>> {
    let b: SaveBody = parse(&body, "save")?;
    let (cfg, cube, image) = {
        let s = st.session();
        (s.run_config(None), s.cube.as_ref().map(|c| c.value.clone()), s.image.as_ref().map(|c| c.value.clone()))
    };
    let io_err = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    std::fs::create_dir_all(&b.dir).map_err(io_err)?;
    let text = serde_json::to_string_pretty(&cfg).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    std::fs::write(b.dir.join("session.json"), text).map_err(io_err)?;
    let mut files = vec!["session.json"];
    let core = |e: Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    if let Some(c) = cube {
        io::save_cube(&c, b.dir.join("cube.nfsr")).map_err(core)?;
        files.push("cube.nfsr");
    }
    if let Some(i) = image {
        io::save_image(&i, b.dir.join("image.nfsr"), false).map_err(core)?;
        files.push("image.nfsr");
    }
    Ok(Json(json!({"files": files})))
}

async fn get_job(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Job>> {
    st.jobs
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no job {id}")))
}

#[derive(Deserialize)]
struct DerivedQuery {
    #[serde(rename = "vMax_mps", default = "default_vmax")]
    v_max: f64,
}

fn default_vmax() -> f64 {
    1.0
}

async fn get_derived(State(st): State<AppState>, Query(q): Query<DerivedQuery>) -> ApiResult<Json<Value>> {
    let s = st.session().clone();
    let wf = derive_waveform(&s.waveform).map_err(|e| ApiError::from_core("waveform", &e))?;
    let pattern = s.pattern.pattern.build().map_err(|e| ApiError::from_core("pattern", &e))?;
    let poses = synthesize_aperture(&s.array, &pattern, s.pattern.aperture_z_m).map_err(|e| ApiError::from_core("", &e))?;
    let (ex, ey) = aperture_extent(&poses);
    let scene = s.scene.build(std::path::Path::new("."), s.simulation.seed).ok();
    let standoff = scene.map(|sc| {
        let zc = sc.scatterers.iter().map(|p| p.position[2]).sum::<f64>() / sc.len() as f64;
        (zc - s.pattern.aperture_z_m).abs()
    });
    let cross = |extent: f64| standoff.and_then(|z0| resolution(&wf, extent, extent, z0).ok()).map(|r| r.dx);
    let bounds = sampling_bounds(q.v_max, wf.lambda_c, wf.max_range).map_err(|e| ApiError::from_core("", &e))?;
    Ok(Json(json!({
        "bandwidth_Hz": wf.bandwidth,
        "k0_rad_per_m": wf.k0,
        "dk_rad_per_m": wf.dk,
        "lambdaC_m": wf.lambda_c,
        "rangeResolution_m": wf.range_resolution,
        "maxRange_m": wf.max_range,
        "crossRangeResolution_m": {"x": cross(ex), "y": cross(ey)},
        "standoff_m": standoff,
        "aperture_m": {"x": ex, "y": ey},
        "poseCount": poses.len(),
        "virtualElements": s.array.virtual_elements(),
        "samplingBounds": bounds,
        "vMax_mps": q.v_max,
    })))
}

fn wants_binary(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("application/octet-stream"))
}

fn binary(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
}

fn csv_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv")], bytes).into_response()
}

fn internal(e: Error) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

async fn get_pattern_csv(State(st): State<AppState>) -> ApiResult<Response> {
    let p = st.session().pattern.pattern.clone();
    let pattern = p.build().map_err(|e| ApiError::from_core("pattern", &e))?;
    let mut buf = Vec::new();
    io::write_pattern_csv(&pattern, &mut buf).map_err(internal)?;
    Ok(csv_response(buf))
}

fn current_image(st: &AppState) -> ApiResult<Arc<ImageVolume>> {
    st.session()
        .image
        .as_ref()
        .map(|i| i.value.clone())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no image has been reconstructed"))
}

#[derive(Deserialize)]
struct SliceQuery {
    /// Plane height (m); the nearest plane is returned. Defaults to the peak plane.
    z: Option<f64>,
    #[serde(rename = "dbMin", default = "default_db_min")]
    db_min: f64,
}

fn default_db_min() -> f64 {
    -40.0
}

async fn get_image_slice(State(st): State<AppState>, Query(q): Query<SliceQuery>, headers: HeaderMap) -> ApiResult<Response> {
    let img = current_image(&st)?;
    if !(q.db_min.is_finite() && q.db_min <= 0.0) {
        return Err(ApiError::validation(ConfigError::at("dbMin", "must be a nonpositive number")));
    }
    let iz = match q.z {
        Some(z) if z.is_finite() => img.nearest_index([img.x[0], img.y[0], z])[2],
        Some(_) => return Err(ApiError::validation(ConfigError::at("z", "must be finite"))),
        None => img.argmax()[2],
    };
    if wants_binary(&headers) {
        let plane = img.values.slice(ndarray::s![.., .., iz..iz + 1]).to_owned();
        let slice = ImageVolume::new(img.x.clone(), img.y.clone(), vec![img.z[iz]], plane, img.meta.clone()).map_err(internal)?;
        return Ok(binary(io::encode_image(&slice, false).and_then(|c| c.to_bytes()).map_err(internal)?));
    }
    if headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("text/csv")) {
        let mut buf = Vec::new();
        io::write_slice_csv(&img, iz, q.db_min, &mut buf).map_err(internal)?;
        return Ok(csv_response(buf));
    }
    Ok(Json(json!({
        "z_m": img.z[iz],
        "zIndex": iz,
        "x_m": img.x,
        "y_m": img.y,
        "dbMin": q.db_min,
        "algorithm": img.meta.algorithm,
        "dB": img.slice_db(iz, q.db_min),
    }))
    .into_response())
}

async fn get_image(State(st): State<AppState>) -> ApiResult<Response> {
    let img = current_image(&st)?;
    Ok(binary(io::encode_image(&img, false).and_then(|c| c.to_bytes()).map_err(internal)?))
}

async fn get_cube(State(st): State<AppState>) -> ApiResult<Response> {
    let cube = st
        .session()
        .cube
        .as_ref()
        .map(|c| c.value.clone())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no beat signal has been computed"))?;
    Ok(binary(io::encode_cube(&cube).and_then(|c| c.to_bytes()).map_err(internal)?))
}

async fn get_psf_csv(State(st): State<AppState>) -> ApiResult<Response> {
    let img = current_image(&st)?;
    let dz = match &st.session().pattern.pattern {
        PatternConfig::Irregular(s) => s.dz_max_m,
        _ => 0.0,
    };
    let report = psf_report(&img).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let mut buf = Vec::new();
    pipeline::write_psf_csv(&[PsfRow { dz_max_m: dz, report, time_s: img.meta.time_s }], &mut buf).map_err(internal)?;
    Ok(csv_response(buf))
}

