use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fluoro_core::colorimetry::STANDARD_ILLUMINANTS;
use fluoro_core::fitting::{
    evaluate_de, fit_diagonal, interpolate_materials, material_from_fit, EvalContext, EvalPath, EvalReport, FitConfig,
    FluorescenceFit, MaterialModel,
};
use fluoro_core::image_io::{encode_pfm, encode_png, encode_ppm, read_rgb8, read_texture, RgbImage};
use fluoro_core::io::{read_bispec, read_material, to_json};
use fluoro_core::palette::PaletteAxes;
use fluoro_core::render::{heatmap, render_sphere, render_swatch, HeatmapConfig, HsvTexture, PreviewScene, TextureMap};
use fluoro_core::reradiation::decompose;
use fluoro_core::{
    Error, FluorescentMaterial, IlluminantRegistry, MaterialReducer, Palette, PaletteContext, ReducedExport, Result,
    SensitivityBasis, SpectralReradMatrix, WavelengthGrid,
};
use fluoro_service::{AppState, ServiceConfig};
use serde::Serialize;

use crate::{
    Command, EvalArgs, FitArgs, HeatmapArgs, InterpArgs, MatrixKind, PaletteArgs, ReduceArgs, RenderArgs, ServeArgs,
    SignMode, Source,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => fit(a),
        Command::Reduce(a) => reduce(a),
        Command::Eval(a) => eval(a),
        Command::Palette(a) => palette(a),
        Command::Render(a) => render(a),
        Command::Interp(a) => interp(a),
        Command::Heatmap(a) => heatmap_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn registry(grid: WavelengthGrid) -> Result<IlluminantRegistry> {
    IlluminantRegistry::from_env(grid)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write(path, to_json(value)?.as_bytes())
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn write_image(path: &Path, img: &RgbImage) -> Result<()> {
    match extension(path).as_str() {
        "ppm" => write(path, &encode_ppm(img)),
        "png" => write(path, &encode_png(img)?),
        other => Err(Error::param("out", format!("unsupported image extension `{other}` (ppm, png)"))),
    }
}

fn read_matrix(path: &Path) -> Result<SpectralReradMatrix> {
    let (m, report) = read_bispec(path)?;
    if report.clamped_negative > 0 {
        eprintln!("warning: {}: clamped {} negative entries to zero", path.display(), report.clamped_negative);
    }
    if report.zeroed_upward > 0 {
        eprintln!("warning: {}: zeroed {} entries below the diagonal in energy", path.display(), report.zeroed_upward);
    }
    Ok(m)
}

fn fit(a: FitArgs) -> Result<()> {
    let p = read_matrix(&a.bispec)?;
    let config = FitConfig {
        q: a.q as usize,
        max_iters: a.max_iters,
        seed: a.seed,
        stride: a.stride,
        ..FitConfig::default()
    };
    config.validate()?;
    let (_, fit) = MaterialModel::fit(&p, &config)?;
    let rho = decompose(&p)?.rho;
    let xyz = SensitivityBasis::xyz(*p.grid());
    let mut out = material_from_fit(&rho, &fit, &xyz)?;
    let diagonal = a.diagonal.map(|m| fit_diagonal(&rho, m)).transpose()?;
    if let Some(d) = &diagonal {
        out.material.diagonal = Some(d.model.clone());
    }
    out.material.notes = Some(format!("fitted from {} with q = {}", file_name(&a.bispec), a.q));
    out.material.validate()?;
    for adj in &out.adjustments {
        eprintln!("warning: {adj}");
    }
    write_json(&a.out, &out.material)?;
    if let Some(path) = &a.report {
        #[derive(Serialize)]
        struct FitReport<'a> {
            fit: &'a FluorescenceFit,
            diagonal_rms: Option<f64>,
            adjustments: &'a [String],
            material: &'a FluorescentMaterial,
        }
        write_json(
            path,
            &FitReport {
                fit: &fit,
                diagonal_rms: diagonal.as_ref().map(|d| d.rms),
                adjustments: &out.adjustments,
                material: &out.material,
            },
        )?;
    }
    println!(
        "fit {} Gaussian(s) to {}: rms {:.3e}{}",
        fit.gaussians.len(),
        a.bispec.display(),
        fit.rms,
        if fit.trivial { " (no fluorescence found)" } else { "" }
    );
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Composed reduced matrices of a material (default grid) or a measured matrix
/// (its own grid).
fn reduce_source(src: &Source, basis_name: &str) -> Result<(SensitivityBasis, fluoro_core::ComposedRerad)> {
    if let Some(path) = &src.material {
        let m = read_material(path)?;
        let basis = SensitivityBasis::by_name(basis_name, WavelengthGrid::default())?;
        let reducer = MaterialReducer::new(basis.clone());
        return Ok((basis, reducer.reduce(&m)?));
    }
    let path = src.bispec.as_ref().ok_or_else(|| Error::param("material", "a material or bispectral matrix is required"))?;
    let p = read_matrix(path)?;
    let basis = SensitivityBasis::by_name(basis_name, *p.grid())?;
    let composed = MaterialModel::exact(&p)?.reduce(&basis)?;
    Ok((basis, composed))
}

fn reduce(a: ReduceArgs) -> Result<()> {
    let (basis, composed) = reduce_source(&a.source, &a.basis)?;
    let export = ReducedExport::new(&a.basis, &basis, &composed);
    match &a.out {
        Some(path) => {
            write_json(path, &export)?;
            println!("wrote {}×{} reduced matrices to {}", basis.channels(), basis.channels(), path.display());
        }
        None => print!("{}", to_json(&export)?),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let data = a.bispec.iter().map(|p| read_matrix(p)).collect::<Result<Vec<_>>>()?;
    let grid = *data[0].grid();
    if let Some(bad) = data.iter().position(|p| p.grid() != &grid) {
        return Err(Error::GridMismatch {
            expected: format!("{grid:?} ({})", a.bispec[0].display()),
            found: format!("{:?} ({})", data[bad].grid(), a.bispec[bad].display()),
        });
    }
    let reg = registry(grid)?;
    let names: Vec<String> = if a.illuminants.is_empty() {
        STANDARD_ILLUMINANTS.iter().map(|s| s.to_string()).collect()
    } else {
        a.illuminants.clone()
    };
    let illuminants = names.iter().map(|n| reg.get(n).cloned()).collect::<Result<Vec<_>>>()?;
    let paths = if a.paths.is_empty() { EvalPath::ALL.to_vec() } else { a.paths.clone() };
    let config = FitConfig::with_q(a.q as usize);
    let fits = data.iter().map(|p| MaterialModel::fit(p, &config)).collect::<Result<Vec<_>>>()?;
    let rms: Vec<f64> = fits.iter().map(|(_, f)| f.rms).collect();
    let models: Vec<MaterialModel> = fits.into_iter().map(|(m, _)| m).collect();
    let ctx = EvalContext::new(SensitivityBasis::by_name(&a.basis, grid)?);
    let reports = paths
        .iter()
        .map(|&path| evaluate_de(&data, &models, &illuminants, path, &ctx))
        .collect::<Result<Vec<EvalReport>>>()?;

    println!("{:<18} {:>8} {:>8} {:>8}", "path", "mean", "median", "max");
    for r in &reports {
        println!("{:<18} {:>8.4} {:>8.4} {:>8.4}", r.path.to_string(), r.overall.mean, r.overall.median, r.overall.max);
    }
    if let Some(out) = &a.out {
        #[derive(Serialize)]
        struct Report<'a> {
            q: u64,
            basis: &'a str,
            files: Vec<String>,
            fit_rms: &'a [f64],
            reports: &'a [EvalReport],
        }
        write_json(
            out,
            &Report {
                q: a.q,
                basis: &a.basis,
                files: a.bispec.iter().map(|p| p.display().to_string()).collect(),
                fit_rms: &rms,
                reports: &reports,
            },
        )?;
    }
    Ok(())
}

fn palette(a: PaletteArgs) -> Result<()> {
    let grid = WavelengthGrid::default();
    let material = a.material.as_deref().map(read_material).transpose()?;
    let first = material.as_ref().map(|m| m.gaussians[0]);
    let albedo = a.albedo.or(material.as_ref().map(|m| m.albedo_xyz)).unwrap_or([0.14, 0.14, 0.2]);
    let mu_a = a.mu_a.or(first.map(|g| g.mu_a)).unwrap_or(420.0);
    let sigma_a = a.sigma_a.or(first.map(|g| g.sigma_a)).unwrap_or(100.0);
    let ill = registry(grid)?.get(&a.illuminant)?.clone();
    let ctx = PaletteContext::new(SensitivityBasis::by_name(&a.basis, grid)?, ill, albedo, mu_a, sigma_a)?
        .with_alpha_bar(a.alpha_bar)?
        .with_component(a.component)
        .with_exposure(a.exposure);
    let pal = Palette::generate(&ctx, PaletteAxes::with_resolution(a.res))?;
    write_image(&a.out, &pal.to_image(a.cell_px))?;
    let params = a.params.clone().unwrap_or_else(|| a.out.with_extension("json"));
    write_json(&params, &pal.sidecar(a.cell_px))?;
    let clipped = pal.cells.iter().filter(|c| c.clipped).count();
    println!(
        "wrote {}×{} palette to {} and {} ({} cells clipped)",
        pal.rows(),
        pal.cols(),
        a.out.display(),
        params.display(),
        clipped
    );
    if let (Some((row, col)), Some(out)) = (a.pick, &a.pick_out) {
        let pick = pal.pick(row, col)?;
        let mut m = ctx.material(pick.mu_e_nm, pick.sigma_e_nm)?;
        m.notes = Some(format!("palette cell ({row}, {col}) under {}", a.illuminant));
        write_json(out, &m)?;
        println!("cell ({row}, {col}): mu_e {:.3} nm, sigma_e {:.3} nm -> {}", pick.mu_e_nm, pick.sigma_e_nm, out.display());
    }
    Ok(())
}

fn texture_map(path: &Option<PathBuf>, range: (f64, f64)) -> Result<Option<TextureMap>> {
    path.as_deref()
        .map(|p| {
            Ok(TextureMap {
                texture: read_texture(p)?,
                range: [range.0, range.1],
            })
        })
        .transpose()
}

fn render(a: RenderArgs) -> Result<()> {
    let grid = WavelengthGrid::default();
    let material = read_material(&a.material)?;
    let reg = registry(grid)?;
    let ill = reg.get(&a.illuminant)?.clone();
    let reducer = MaterialReducer::new(SensitivityBasis::by_name(&a.basis, grid)?);
    let out = if a.flat {
        render_swatch(&material, &ill, &reducer, a.component, a.exposure, a.size)?
    } else {
        let mut scene = PreviewScene::new(material, ill, a.size);
        if let Some(name) = &a.split {
            scene.illuminants.push(reg.get(name)?.clone());
        }
        scene.exposure = a.exposure;
        scene.component = a.component;
        scene.albedo_map = texture_map(&a.albedo_map, a.albedo_range)?;
        scene.strength_map = texture_map(&a.strength_map, a.strength_range)?;
        scene.mu_a_map = texture_map(&a.mu_a_map, a.mu_a_range)?;
        if let Some(p) = &a.hsv_map {
            scene.hsv_map = Some(HsvTexture {
                image: read_rgb8(&fs::read(p)?)?,
                mapping: Default::default(),
            });
        }
        render_sphere(&scene, &reducer)?
    };
    write_image(&a.out, &out.display)?;
    if let Some(p) = &a.float_out {
        write(p, &encode_pfm(&out.xyz))?;
    }
    println!("wrote {0}×{0} render to {1} ({2} pixels clipped)", a.size, a.out.display(), out.clipped_pixels);
    Ok(())
}

fn interp(a: InterpArgs) -> Result<()> {
    let m = interpolate_materials(&read_material(&a.a)?, &read_material(&a.b)?, a.t)?;
    write_json(&a.out, &m)?;
    println!("wrote t = {} blend to {}", a.t, a.out.display());
    Ok(())
}

fn heatmap_cmd(a: HeatmapArgs) -> Result<()> {
    let matrix = match a.kind {
        MatrixKind::Reduced => reduce_source(&a.source, &a.basis)?.1.total.entries().clone(),
        MatrixKind::Spectral => match (&a.source.material, &a.source.bispec) {
            (Some(path), _) => {
                let basis = SensitivityBasis::by_name(&a.basis, WavelengthGrid::default())?;
                MaterialModel::from_material(&read_material(path)?).spectral_matrix(&basis)?.into_entries()
            }
            (None, Some(path)) => read_matrix(path)?.into_entries(),
            (None, None) => return Err(Error::param("material", "a material or bispectral matrix is required")),
        },
    };
    let cfg = HeatmapConfig {
        scale: a.scale,
        signed: match a.sign {
            SignMode::Auto => None,
            SignMode::Signed => Some(true),
            SignMode::Unsigned => Some(false),
        },
        cell_px: a.cell_px.unwrap_or(if a.kind == MatrixKind::Reduced { 64 } else { 1 }),
    };
    let img = heatmap(&matrix, &cfg)?;
    write_image(&a.out, &img)?;
    println!("wrote {}×{} heatmap to {}", img.width(), img.height(), a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        data_dir: std::env::var_os(fluoro_core::colorimetry::DATA_DIR_ENV).map(PathBuf::from),
        export_dir: a.export_dir,
        ..Default::default()
    };
    let state = Arc::new(AppState::new(config)?);
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    println!("fluoro {} listening on http://{addr}", fluoro_core::VERSION);
    rt.block_on(fluoro_service::serve(state, addr))?;
    Ok(())
}
