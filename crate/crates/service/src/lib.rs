//! Local HTTP service exposing materials, palettes, previews and reduced
//! matrices to interactive clients.
//!
//! Endpoints:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/illuminants` | registered illuminants |
//! | POST | `/materials` | create, returns revision 1 |
//! | GET | `/materials/{id}` | current record |
//! | PATCH | `/materials/{id}` | partial update; `If-Match` or `expected_revision` for conditional writes |
//! | POST | `/materials/{id}/export` | write material JSON to the export directory |
//! | GET | `/palette` | `format=ppm\|png\|json` |
//! | GET | `/preview` | `format=ppm\|png\|pfm` |
//! | GET | `/reduced` | K×K matrices as JSON |
//!
//! Every response carries `X-Fluoro-Version`; responses computed against a
//! basis carry `X-Fluoro-Basis-Hash`. GET responses have an `ETag` derived
//! from the request and the material revision and honor `If-None-Match`.

mod error;
mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, RawQuery, State};
use axum::http::header::{self, HeaderMap, HeaderName, HeaderValue};
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fluoro_core::image_io::{encode_pfm, encode_png, encode_ppm};
use fluoro_core::palette::{PaletteAxes, DEFAULT_CELL_PX};
use fluoro_core::render::{render_sphere, PreviewScene};
use fluoro_core::{
    io, Component, FluorescentMaterial, IlluminantRegistry, MaterialReducer, Palette, PaletteContext, ReducedExport,
    SensitivityBasis, WavelengthGrid,
};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::ApiError;
pub use store::{LobePatch, MaterialPatch, MaterialRecord, MaterialStore};

pub const VERSION_HEADER: &str = "x-fluoro-version";
pub const BASIS_HEADER: &str = "x-fluoro-basis-hash";

const MAX_PALETTE_RES: usize = 256;
const MAX_PREVIEW_SIZE: u32 = 1024;
const MAX_CELL_PX: u32 = 16;
const DEFAULT_PREVIEW_SIZE: u32 = 256;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Extra illuminant and CMF assets.
    pub data_dir: Option<PathBuf>,
    /// Where `POST /materials/{id}/export` writes files.
    pub export_dir: PathBuf,
    pub grid: WavelengthGrid,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: None,
            export_dir: PathBuf::from("exports"),
            grid: WavelengthGrid::default(),
        }
    }
}

struct BasisEntry {
    name: &'static str,
    reducer: MaterialReducer,
    hash: String,
}

/// Shared service state: the material store plus read-only color data.
pub struct AppState {
    store: MaterialStore,
    illuminants: IlluminantRegistry,
    bases: Vec<BasisEntry>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> fluoro_core::Result<Self> {
        let illuminants = IlluminantRegistry::load(config.grid, config.data_dir.as_deref())?;
        let bases = ["xyzu", "xyz"]
            .into_iter()
            .map(|name| {
                let basis = SensitivityBasis::by_name(name, config.grid)?;
                Ok(BasisEntry {
                    name,
                    hash: basis.fingerprint(),
                    reducer: MaterialReducer::new(basis),
                })
            })
            .collect::<fluoro_core::Result<_>>()?;
        Ok(AppState {
            store: MaterialStore::default(),
            illuminants,
            bases,
            config,
        })
    }

    pub fn store(&self) -> &MaterialStore {
        &self.store
    }

    fn basis(&self, name: Option<&str>) -> Result<&BasisEntry, ApiError> {
        let name = name.unwrap_or("xyzu");
        self.bases
            .iter()
            .find(|b| b.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| ApiError::invalid("basis", format!("unknown basis `{name}` (xyz or xyzu)")))
    }
}

/// Router with CORS for local UIs.
pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin, _| {
            let o = origin.as_bytes();
            [&b"http://localhost"[..], b"http://127.0.0.1", b"http://[::1]"]
                .iter()
                .any(|p| o.starts_with(p) && matches!(o.get(p.len()), None | Some(b':')))
        }))
        .allow_methods([Method::GET, Method::POST, Method::PATCH])
        .allow_headers([header::CONTENT_TYPE, header::IF_MATCH, header::IF_NONE_MATCH])
        .expose_headers([
            header::ETAG,
            HeaderName::from_static(VERSION_HEADER),
            HeaderName::from_static(BASIS_HEADER),
        ]);
    Router::new()
        .route("/illuminants", get(list_illuminants))
        .route("/materials", post(create_material))
        .route("/materials/{id}", get(get_material).patch(patch_material))
        .route("/materials/{id}/export", post(export_material))
        .route("/palette", get(palette))
        .route("/preview", get(preview))
        .route("/reduced", get(reduced))
        .layer(axum::middleware::map_response(stamp_version))
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn stamp_version(mut res: Response) -> Response {
    res.headers_mut()
        .insert(VERSION_HEADER, HeaderValue::from_static(fluoro_core::VERSION));
    res
}

type Shared = State<Arc<AppState>>;

/// Query string accessor producing field-level 422s.
struct Params(HashMap<String, String>);

impl Params {
    fn str(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>, ApiError> {
        self.str(name)
            .map(|v| v.parse::<T>().map_err(|_| ApiError::invalid(name, format!("cannot parse `{v}`"))))
            .transpose()
    }

    fn required<T: std::str::FromStr>(&self, name: &str) -> Result<T, ApiError> {
        self.parse(name)?.ok_or_else(|| ApiError::invalid(name, "required"))
    }

    fn bounded<T: std::str::FromStr + PartialOrd + std::fmt::Display + Copy>(&self, name: &str, default: T, lo: T, hi: T) -> Result<T, ApiError> {
        let v = self.parse(name)?.unwrap_or(default);
        if v < lo || v > hi {
            return Err(ApiError::invalid(name, format!("{v} not in [{lo}, {hi}]")));
        }
        Ok(v)
    }

    fn component(&self) -> Result<Component, ApiError> {
        Ok(self.str("component").map(str::parse).transpose()?.unwrap_or_default())
    }
}

fn etag_for(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let hex: String = h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect();
    format!("\"{hex}\"")
}

fn matches_etag(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim().trim_start_matches("W/") == etag || t.trim() == "*"))
}

/// Body with ETag and caching headers, or `304` when the client has it.
fn cached(headers: &HeaderMap, etag: String, content_type: &'static str, basis_hash: Option<&str>, body: Vec<u8>) -> Response {
    let mut res = if matches_etag(headers, &etag) {
        StatusCode::NOT_MODIFIED.into_response()
    } else {
        ([(header::CONTENT_TYPE, content_type)], Body::from(body)).into_response()
    };
    let h = res.headers_mut();
    h.insert(header::ETAG, HeaderValue::from_str(&etag).expect("hex etag"));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"));
    if let Some(b) = basis_hash {
        h.insert(BASIS_HEADER, HeaderValue::from_str(b).expect("hex hash"));
    }
    res
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, ApiError> {
    Ok(io::to_json(v)?.into_bytes())
}

fn record_response(rec: &MaterialRecord, status: StatusCode) -> Result<Response, ApiError> {
    let mut res = (status, [(header::CONTENT_TYPE, "application/json")], json_bytes(rec)?).into_response();
    res.headers_mut()
        .insert(header::ETAG, HeaderValue::from_str(&record_etag(rec)).expect("digits"));
    Ok(res)
}

fn record_etag(rec: &MaterialRecord) -> String {
    format!("\"{}-{}\"", rec.id, rec.revision)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

#[derive(Serialize)]
struct IlluminantInfo {
    name: String,
    /// `SᵀL` in the XYZU basis.
    xyzu: Vec<f64>,
    display_scale: f64,
}

async fn list_illuminants(State(st): Shared, headers: HeaderMap) -> Result<Response, ApiError> {
    let basis = st.basis(Some("xyzu"))?;
    let list = st
        .illuminants
        .iter()
        .map(|ill| {
            Ok(IlluminantInfo {
                name: ill.name().to_string(),
                xyzu: ill.color(basis.reducer.basis())?,
                display_scale: ill.display_scale(basis.reducer.basis())?,
            })
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    let body = json_bytes(&serde_json::json!({ "illuminants": list }))?;
    let etag = etag_for(&[b"illuminants", &body]);
    Ok(cached(&headers, etag, "application/json", Some(&basis.hash), body))
}

async fn create_material(State(st): Shared, body: Result<Json<FluorescentMaterial>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(m) = body.map_err(|e| ApiError::invalid("body", e.body_text()))?;
    let rec = st.store.create(m)?;
    record_response(&rec, StatusCode::CREATED)
}

async fn get_material(State(st): Shared, Path(id): Path<u64>, headers: HeaderMap) -> Result<Response, ApiError> {
    let rec = st.store.get(id)?;
    if matches_etag(&headers, &record_etag(&rec)) {
        let mut res = StatusCode::NOT_MODIFIED.into_response();
        res.headers_mut()
            .insert(header::ETAG, HeaderValue::from_str(&record_etag(&rec)).expect("digits"));
        return Ok(res);
    }
    record_response(&rec, StatusCode::OK)
}

/// Revision named by an `If-Match` header (`"id-rev"`, `"rev"` or bare).
fn if_match_revision(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    let Some(v) = headers.get(header::IF_MATCH) else {
        return Ok(None);
    };
    let s = v.to_str().unwrap_or("").trim().trim_start_matches("W/").trim_matches('"');
    let rev = s.rsplit('-').next().unwrap_or("");
    rev.parse()
        .map(Some)
        .map_err(|_| ApiError::BadRequest(format!("unparseable If-Match `{s}`")))
}

async fn patch_material(
    State(st): Shared,
    Path(id): Path<u64>,
    headers: HeaderMap,
    body: Result<Json<MaterialPatch>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(patch) = body.map_err(|e| ApiError::invalid("body", e.body_text()))?;
    let expected = if_match_revision(&headers)?.or(patch.expected_revision);
    let rec = st.store.patch(id, &patch, expected)?;
    record_response(&rec, StatusCode::OK)
}

#[derive(Serialize)]
struct ExportInfo {
    id: u64,
    revision: u64,
    path: String,
}

async fn export_material(State(st): Shared, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let rec = st.store.get(id)?;
    let dir = st.config.export_dir.clone();
    let path = dir.join(format!("material-{}-r{}.json", rec.id, rec.revision));
    let text = io::to_json(&rec.material)?;
    let written = path.clone();
    blocking(move || {
        std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(&written, text)).map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await?;
    let info = ExportInfo {
        id: rec.id,
        revision: rec.revision,
        path: path.display().to_string(),
    };
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

fn parse_albedo(s: &str) -> Result<[f64; 3], ApiError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ApiError::invalid("albedo", format!("cannot parse `{s}`")))?;
    v.try_into().map_err(|_| ApiError::invalid("albedo", "expected three comma-separated values"))
}

async fn palette(State(st): Shared, Query(q): Query<HashMap<String, String>>, RawQuery(raw): RawQuery, headers: HeaderMap) -> Result<Response, ApiError> {
    let p = Params(q);
    let record = p.parse::<u64>("material")?.map(|id| st.store.get(id)).transpose()?;
    let first = record.as_ref().map(|r| r.material.gaussians[0]);
    let albedo = match (p.str("albedo"), &record) {
        (Some(a), _) => parse_albedo(a)?,
        (None, Some(r)) => r.material.albedo_xyz,
        (None, None) => [0.14, 0.14, 0.2],
    };
    let mu_a = p.parse("mu_a")?.or(first.map(|g| g.mu_a)).unwrap_or(420.0);
    let sigma_a = p.parse("sigma_a")?.or(first.map(|g| g.sigma_a)).unwrap_or(100.0);
    let res = p.bounded("res", 64usize, 1, MAX_PALETTE_RES)?;
    let cell_px = p.bounded("cell_px", DEFAULT_CELL_PX, 1, MAX_CELL_PX)?;
    let exposure = p.bounded("exposure", 1.0, 1e-6, 1e6)?;
    let component = p.component()?;
    let format = p.str("format").unwrap_or("ppm").to_ascii_lowercase();
    let ill = st.illuminants.get(p.str("illuminant").unwrap_or("D65"))?.clone();
    let entry = st.basis(p.str("basis"))?;
    let basis = entry.reducer.basis().clone();
    let hash = entry.hash.clone();
    let revision = record.as_ref().map_or(0, |r| r.revision).to_le_bytes();
    let etag = etag_for(&[b"palette", raw.unwrap_or_default().as_bytes(), &revision, hash.as_bytes()]);

    let (body, ctype) = blocking(move || {
        let ctx = PaletteContext::new(basis, ill, albedo, mu_a, sigma_a)?
            .with_component(component)
            .with_exposure(exposure);
        let pal = Palette::generate(&ctx, PaletteAxes::with_resolution(res))?;
        Ok(match format.as_str() {
            "ppm" => (encode_ppm(&pal.to_image(cell_px)), "image/x-portable-pixmap"),
            "png" => (encode_png(&pal.to_image(cell_px))?, "image/png"),
            "json" => (json_bytes(&pal.sidecar(cell_px))?, "application/json"),
            other => return Err(ApiError::invalid("format", format!("unknown format `{other}` (ppm, png, json)"))),
        })
    })
    .await?;
    Ok(cached(&headers, etag, ctype, Some(&hash), body))
}

async fn preview(State(st): Shared, Query(q): Query<HashMap<String, String>>, RawQuery(raw): RawQuery, headers: HeaderMap) -> Result<Response, ApiError> {
    let p = Params(q);
    let rec = st.store.get(p.required("material")?)?;
    let size = p.bounded("size", DEFAULT_PREVIEW_SIZE, 1, MAX_PREVIEW_SIZE)?;
    let exposure = p.bounded("exposure", 1.0, 1e-6, 1e6)?;
    let component = p.component()?;
    let format = p.str("format").unwrap_or("ppm").to_ascii_lowercase();
    let mut illuminants = vec![st.illuminants.get(p.str("illuminant").unwrap_or("D65"))?.clone()];
    if let Some(right) = p.str("split") {
        illuminants.push(st.illuminants.get(right)?.clone());
    }
    let entry = st.basis(p.str("basis"))?;
    let reducer = entry.reducer.clone();
    let hash = entry.hash.clone();
    let etag = etag_for(&[b"preview", raw.unwrap_or_default().as_bytes(), &rec.revision.to_le_bytes(), hash.as_bytes()]);

    let (body, ctype) = blocking(move || {
        let mut scene = PreviewScene::new(rec.material, illuminants[0].clone(), size);
        scene.illuminants = illuminants;
        scene.exposure = exposure;
        scene.component = component;
        let out = render_sphere(&scene, &reducer)?;
        Ok(match format.as_str() {
            "ppm" => (encode_ppm(&out.display), "image/x-portable-pixmap"),
            "png" => (encode_png(&out.display)?, "image/png"),
            "pfm" => (encode_pfm(&out.xyz), "image/x-portable-floatmap"),
            other => return Err(ApiError::invalid("format", format!("unknown format `{other}` (ppm, png, pfm)"))),
        })
    })
    .await?;
    Ok(cached(&headers, etag, ctype, Some(&hash), body))
}

#[derive(Serialize)]
struct ReducedResponse {
    material: u64,
    revision: u64,
    #[serde(flatten)]
    export: ReducedExport,
}

async fn reduced(State(st): Shared, Query(q): Query<HashMap<String, String>>, RawQuery(raw): RawQuery, headers: HeaderMap) -> Result<Response, ApiError> {
    let p = Params(q);
    let rec = st.store.get(p.required("material")?)?;
    let entry = st.basis(p.str("basis"))?;
    let composed = entry.reducer.reduce(&rec.material)?;
    let body = json_bytes(&ReducedResponse {
        material: rec.id,
        revision: rec.revision,
        export: ReducedExport::new(entry.name, entry.reducer.basis(), &composed),
    })?;
    let etag = etag_for(&[b"reduced", raw.unwrap_or_default().as_bytes(), &rec.revision.to_le_bytes(), entry.hash.as_bytes()]);
    Ok(cached(&headers, etag, "application/json", Some(&entry.hash), body))
}
