use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hierls_core::grid::GridGeom;
use hierls_core::levelset::{LevelSetMap, PhaseField};
use hierls_core::posterior::{generate_data, Posterior};
use hierls_core::prior::{Basis, PriorSpec, SpectralField};
use hierls_core::sampler::Chain;
use hierls_core::stats::finalize;

use crate::error::{io_err, CliError, CliResult};
use crate::iofmt::{
    fmt_f64, read_data_csv, read_field, read_stats, write_data_csv, write_field, write_hist2d_csv,
    write_hist_csv, write_record, write_stats, write_summary, StatsFile, TraceSink, SCHEMA,
};
use crate::manifest::{Loaded, TruthSection};

/// How many consecutive seeds may be tried before a degenerate truth
/// (some phase entirely absent) is reported as an error.
const MAX_TRUTH_ATTEMPTS: u64 = 64;

fn grid_shape(geom: &GridGeom) -> Vec<usize> {
    vec![geom.points_per_axis(); geom.dim()]
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err("creating directory", dir, e))
}

/// Interprets a stored f64 grid as phase indices, rejecting anything that is
/// not a whole number inside the phase table.
fn indices_from_values(values: &[f64], phases: usize, what: &str) -> CliResult<PhaseField> {
    let mut indices = Vec::with_capacity(values.len());
    for (cell, &v) in values.iter().enumerate() {
        let ok = v.is_finite() && v >= 0.0 && v.fract() == 0.0 && (v as usize) < phases;
        if !ok {
            return Err(CliError::config(format!(
                "{what}: cell {cell} holds {v}, not a phase index below {phases}"
            )));
        }
        indices.push(v as u8);
    }
    Ok(PhaseField { indices })
}

fn phase_as_values(phase: &PhaseField) -> Vec<f64> {
    phase.indices.iter().map(|&i| f64::from(i)).collect()
}

// ---------------------------------------------------------------------------
// make-truth

pub fn make_truth(
    loaded: &Loaded,
    seed_override: Option<u64>,
    out: Option<&Path>,
) -> CliResult<()> {
    let m = &loaded.manifest;
    let spec = m.truth_spec()?;
    let geom = spec.geom();
    let levels = m.level_set()?;
    let dir = loaded.truth_dir(out);
    create_dir(&dir)?;
    let shape = grid_shape(&geom);

    match &m.truth {
        TruthSection::Sample { tau, seed } => {
            let basis = Basis::new(spec)?;
            let seed_requested = seed_override.unwrap_or(*seed);
            let drawn = draw_nondegenerate_truth(&basis, &levels, *tau, seed_requested)?;
            let (coeffs, grid, phase, seed_used) = drawn;

            write_field(
                &dir,
                "coeffs",
                &loaded.hash,
                "coefficients",
                "dimensionless",
                &[coeffs.len()],
                &coeffs.coeffs,
                &[("tau", fmt_f64(*tau))],
            )?;
            write_field(
                &dir,
                "u_fine",
                &loaded.hash,
                "field",
                "level-set",
                &shape,
                &grid,
                &[("tau", fmt_f64(*tau))],
            )?;
            write_field(
                &dir,
                "phase",
                &loaded.hash,
                "phase",
                "phase-index",
                &shape,
                &phase_as_values(&phase),
                &[],
            )?;
            write_record(
                &dir.join("truth.meta"),
                &loaded.hash,
                "truth-record",
                &[
                    ("experiment", m.experiment.name().to_string()),
                    ("source", "sampled".to_string()),
                    ("tau", fmt_f64(*tau)),
                    ("seed_requested", seed_requested.to_string()),
                    ("seed_used", seed_used.to_string()),
                ],
            )?;
        }
        TruthSection::External { path } => {
            if seed_override.is_some() {
                return Err(CliError::config(
                    "--seed does not apply to an externally supplied truth",
                ));
            }
            let source = loaded.resolve(path);
            let bytes = fs::read(&source).map_err(|e| io_err("reading", &source, e))?;
            if bytes.len() != 8 * geom.len() {
                return Err(CliError::config(format!(
                    "{}: expected {} cells of 8 bytes, found {} bytes",
                    source.display(),
                    geom.len(),
                    bytes.len()
                )));
            }
            let raw: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let phase = indices_from_values(&raw, levels.phase_count(), "external truth")?;
            write_field(
                &dir,
                "phase",
                &loaded.hash,
                "phase",
                "phase-index",
                &shape,
                &phase_as_values(&phase),
                &[],
            )?;
            write_record(
                &dir.join("truth.meta"),
                &loaded.hash,
                "truth-record",
                &[
                    ("experiment", m.experiment.name().to_string()),
                    ("source", "external".to_string()),
                    ("source_path", source.display().to_string()),
                ],
            )?;
        }
    }
    println!("truth written to {}", dir.display());
    Ok(())
}

/// Draws from the prior at scale `tau`, advancing the seed until every phase
/// is populated. Deterministic: the same requested seed always walks the
/// same seed sequence.
fn draw_nondegenerate_truth(
    basis: &Basis,
    levels: &LevelSetMap,
    tau: f64,
    seed_requested: u64,
) -> CliResult<(SpectralField, Vec<f64>, PhaseField, u64)> {
    for attempt in 0..MAX_TRUTH_ATTEMPTS {
        let seed_used = seed_requested.wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed_used);
        let coeffs = basis.sample_prior(tau, &mut rng);
        let grid = basis.synthesize(&coeffs)?;
        let phase = levels.apply(&grid, tau)?;
        if phase.counts(levels.phase_count()).iter().all(|&c| c > 0) {
            return Ok((coeffs, grid, phase, seed_used));
        }
    }
    Err(CliError::config(format!(
        "no draw within {MAX_TRUTH_ATTEMPTS} seeds from {seed_requested} populated every phase; \
         the thresholds are likely too extreme for tau = {tau}"
    )))
}

// ---------------------------------------------------------------------------
// make-data

pub fn make_data(
    loaded: &Loaded,
    seed_override: Option<u64>,
    out: Option<&Path>,
) -> CliResult<()> {
    let m = &loaded.manifest;
    let spec = m.truth_spec()?;
    let geom = spec.geom();
    let levels = m.level_set()?;

    let truth_dir = loaded.truth_dir(None);
    if !truth_dir.join("phase.bin").is_file() {
        return Err(CliError::config(format!(
            "no truth at {}; run make-truth first",
            truth_dir.display()
        )));
    }
    let (raw, shape) = read_field(&truth_dir, "phase")?;
    if shape != grid_shape(&geom) {
        return Err(CliError::config(format!(
            "truth phase grid has shape {shape:?}, manifest wants {:?}",
            grid_shape(&geom)
        )));
    }
    let phase = indices_from_values(&raw, levels.phase_count(), "truth phase grid")?;
    let values = levels.field_values(&phase);

    let forward = m.forward(&geom)?;
    let clean = forward.observe(&values)?;
    let noise = m.noise_spec();
    let seed_used = m.noise_seed(seed_override);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_used);
    let data = generate_data(&clean, &noise, &mut rng)?;

    let residual: Vec<f64> = data.y.iter().zip(&clean).map(|(y, g)| y - g).collect();
    let rel_error = l2(&residual) / l2(&clean);

    let dir = loaded.data_dir(out);
    create_dir(&dir)?;
    write_data_csv(&dir.join("data.csv"), &loaded.hash, &data)?;
    write_record(
        &dir.join("data.meta"),
        &loaded.hash,
        "data-record",
        &[
            ("experiment", m.experiment.name().to_string()),
            ("observations", data.y.len().to_string()),
            ("seed_used", seed_used.to_string()),
            ("relative_error", fmt_f64(rel_error)),
        ],
    )?;
    println!("data written to {}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sample

pub fn sample(loaded: &Loaded, seed_override: Option<u64>, out: Option<&Path>) -> CliResult<()> {
    let m = &loaded.manifest;
    let spec = m.inversion_spec()?;
    let geom = spec.geom();
    let basis = Basis::new(spec)?;
    let levels = m.level_set()?;

    let data_dir = loaded.data_dir(None);
    let data_path = data_dir.join("data.csv");
    if !data_path.is_file() {
        return Err(CliError::config(format!(
            "no data at {}; run make-data first",
            data_path.display()
        )));
    }
    let data = read_data_csv(&data_path)?;
    let forward = m.forward(&geom)?;
    let post = Posterior::new(levels.clone(), geom, forward, data)?;
    let cfg = m.chain_config(seed_override)?;

    let dir = loaded.run_dir(out);
    create_dir(&dir)?;
    let mut sink = TraceSink::create(&dir.join("trace.csv"), &loaded.hash)?;
    let mut chain = Chain::new(&basis, &post, cfg)?;
    let stats = chain.run(&mut sink)?;
    sink.finish()
        .map_err(|e| io_err("writing", &dir.join("trace.csv"), e))?;

    write_run_outputs(
        &dir,
        &loaded.hash,
        &StatsFile {
            schema: SCHEMA.to_string(),
            manifest_hash: loaded.hash.clone(),
            experiment: m.experiment,
            spec,
            levels: levels.clone(),
            n_steps: cfg.n_steps,
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            seed: cfg.seed,
            stats,
        },
        &basis,
        &levels,
    )?;
    println!("run written to {}", dir.display());
    Ok(())
}

/// Persists everything derived from a finished chain: the thinned frames,
/// the serialized accumulators, the summary scalars, and the summary grids.
/// Zero retained samples still writes every file it can, then reports.
fn write_run_outputs(
    dir: &Path,
    hash: &str,
    file: &StatsFile,
    basis: &Basis,
    levels: &LevelSetMap,
) -> CliResult<()> {
    let geom = file.spec.geom();
    let shape = grid_shape(&geom);
    let stats = &file.stats;

    let mut snap_shape = vec![stats.frames.len()];
    snap_shape.extend_from_slice(&shape);
    let flat: Vec<f64> = stats.frames.iter().flatten().copied().collect();
    write_field(
        dir,
        "snapshots",
        hash,
        "snapshots",
        "field-value",
        &snap_shape,
        &flat,
        &[
            ("thinning", file.thinning.to_string()),
            ("burn_in", file.burn_in.to_string()),
        ],
    )?;

    write_stats(&dir.join("stats.json"), file)?;

    let summary = finalize(stats, basis, levels)?;
    if summary.retained > 0 {
        write_field(
            dir,
            "mean_pushforward",
            hash,
            "summary-grid",
            "field-value",
            &shape,
            &summary.mean_pushforward,
            &[],
        )?;
        write_field(
            dir,
            "var_pushforward",
            hash,
            "summary-grid",
            "field-value^2",
            &shape,
            &summary.var_pushforward,
            &[],
        )?;
        write_field(
            dir,
            "pushforward_of_mean",
            hash,
            "summary-grid",
            "field-value",
            &shape,
            &summary.pushforward_of_mean,
            &[],
        )?;
        write_field(
            dir,
            "mean_rescaled",
            hash,
            "summary-grid",
            "level-set",
            &shape,
            &summary.mean_rescaled,
            &[],
        )?;
    }
    write_summary(&dir.join("summary.txt"), hash, &summary, &shape)?;

    if summary.retained == 0 {
        return Err(CliError::EmptyChain(format!(
            "zero retained samples (n_steps = {}, burn_in = {}); outputs in {} record the empty run",
            file.n_steps,
            file.burn_in,
            dir.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// summarize

pub fn summarize(runs: &[PathBuf], out: &Path) -> CliResult<()> {
    let mut files = Vec::with_capacity(runs.len());
    for dir in runs {
        files.push((dir, read_stats(&dir.join("stats.json"))?));
    }
    let (first_dir, first) = &files[0];
    for (dir, f) in &files[1..] {
        let same = f.spec == first.spec
            && f.levels == first.levels
            && f.experiment == first.experiment;
        if !same {
            return Err(CliError::config(format!(
                "{} and {} come from incompatible experiments",
                first_dir.display(),
                dir.display()
            )));
        }
    }

    // Rebuild through the validating constructor so a hand-edited stats
    // file cannot smuggle in an unusable spec.
    let spec = PriorSpec::new(
        first.spec.alpha(),
        first.spec.dim(),
        first.spec.lengths(),
        first.spec.boundary(),
        first.spec.grid(),
    )?;
    let basis = Basis::new(spec)?;
    let levels = first.levels.clone();

    let mut merged = first.stats.clone();
    for (_, f) in &files[1..] {
        merged.merge(&f.stats)?;
    }

    let mut hashes: Vec<&str> = Vec::new();
    for (_, f) in &files {
        if !hashes.contains(&f.manifest_hash.as_str()) {
            hashes.push(&f.manifest_hash);
        }
    }
    let hash = hashes.join(",");

    create_dir(out)?;
    let summary = finalize(&merged, &basis, &levels)?;
    let shape = grid_shape(&spec.geom());
    if summary.retained > 0 {
        write_field(
            out,
            "mean_pushforward",
            &hash,
            "summary-grid",
            "field-value",
            &shape,
            &summary.mean_pushforward,
            &[],
        )?;
        write_field(
            out,
            "var_pushforward",
            &hash,
            "summary-grid",
            "field-value^2",
            &shape,
            &summary.var_pushforward,
            &[],
        )?;
        write_field(
            out,
            "pushforward_of_mean",
            &hash,
            "summary-grid",
            "field-value",
            &shape,
            &summary.pushforward_of_mean,
            &[],
        )?;
        write_field(
            out,
            "mean_rescaled",
            &hash,
            "summary-grid",
            "level-set",
            &shape,
            &summary.mean_rescaled,
            &[],
        )?;
    }
    write_summary(&out.join("summary.txt"), &hash, &summary, &shape)?;

    if summary.retained == 0 {
        return Err(CliError::EmptyChain(format!(
            "no retained samples across {} runs; summary in {} records the empty merge",
            files.len(),
            out.display()
        )));
    }

    // Density exports: tau and the leading coefficients, singly and in
    // pairs. Modes are ordered by eigenvalue at any fixed scale, largest
    // first, which is the order the accumulator tracks them in.
    let mut axes: Vec<(String, &[f64])> = vec![("tau".to_string(), &merged.tau_samples)];
    for (k, samples) in merged.mode_samples.iter().enumerate() {
        axes.push((format!("mode{}", k + 1), samples));
    }
    for (name, xs) in &axes {
        write_hist_csv(&out.join(format!("hist_{name}.csv")), &hash, name, xs)?;
    }
    for i in 0..axes.len() {
        for j in i + 1..axes.len() {
            let (xn, xs) = &axes[i];
            let (yn, ys) = &axes[j];
            write_hist2d_csv(
                &out.join(format!("hist2d_{xn}_{yn}.csv")),
                &hash,
                xn,
                yn,
                xs,
                ys,
            )?;
        }
    }
    println!("merged {} runs into {}", files.len(), out.display());
    Ok(())
}
