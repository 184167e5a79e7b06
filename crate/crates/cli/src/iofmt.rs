use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hierls_core::levelset::LevelSetMap;
use hierls_core::posterior::DataVector;
use hierls_core::prior::PriorSpec;
use hierls_core::sampler::{StepRecord, StepSink};
use hierls_core::stats::{RunningStats, Summary};
use hierls_core::Error as CoreError;

use crate::error::{io_err, CliError, CliResult};
use crate::manifest::Experiment;

/// Stamp carried by every output file.
pub const SCHEMA: &str = "hierls/1";
pub const HIST_BINS: usize = 50;

/// Shortest decimal that parses back to the identical bit pattern.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn parse_f64(s: &str, what: &str, path: &Path) -> CliResult<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        CliError::config(format!("{}: bad {what} value {s:?}", path.display()))
    })
}

// ---------------------------------------------------------------------------
// Flat binary grids with a text sidecar.

/// Writes `name.bin` (64-bit little-endian, row-major) next to `name.meta`
/// describing shape, ordering, and units, so the payload is readable without
/// this tool.
pub fn write_field(
    dir: &Path,
    name: &str,
    hash: &str,
    kind: &str,
    units: &str,
    shape: &[usize],
    values: &[f64],
    extra: &[(&str, String)],
) -> CliResult<PathBuf> {
    let total: usize = shape.iter().product();
    assert_eq!(total, values.len(), "shape does not match payload");
    let bin_path = dir.join(format!("{name}.bin"));
    let f = fs::File::create(&bin_path).map_err(|e| io_err("creating", &bin_path, e))?;
    let mut w = BufWriter::new(f);
    for v in values {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| io_err("writing", &bin_path, e))?;
    }
    w.flush().map_err(|e| io_err("writing", &bin_path, e))?;

    let shape_text = shape
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let mut lines = vec![
        ("schema", SCHEMA.to_string()),
        ("manifest_hash", hash.to_string()),
        ("kind", kind.to_string()),
        ("dtype", "f64-le".to_string()),
        ("order", "row-major".to_string()),
        ("shape", shape_text),
        ("units", units.to_string()),
    ];
    lines.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
    let meta_path = dir.join(format!("{name}.meta"));
    let text: String = lines
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    fs::write(&meta_path, text).map_err(|e| io_err("writing", &meta_path, e))?;
    Ok(bin_path)
}

/// Writes a standalone `key = value` record (e.g. `truth.meta`) with the
/// standard schema and hash stamp up front.
pub fn write_record(
    path: &Path,
    hash: &str,
    kind: &str,
    extra: &[(&str, String)],
) -> CliResult<()> {
    let mut lines = vec![
        ("schema", SCHEMA.to_string()),
        ("manifest_hash", hash.to_string()),
        ("kind", kind.to_string()),
    ];
    lines.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
    let text: String = lines
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    fs::write(path, text).map_err(|e| io_err("writing", path, e))
}

/// Reads a `key = value` sidecar.
pub fn read_meta(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| io_err("reading", path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!("{}: malformed line {line:?}", path.display()))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn meta_get<'a>(meta: &'a [(String, String)], key: &str, path: &Path) -> CliResult<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| CliError::config(format!("{}: missing key {key}", path.display())))
}

/// Reads `name.bin` + `name.meta`, checking schema, dtype, ordering, and
/// that the payload length matches the declared shape.
pub fn read_field(dir: &Path, name: &str) -> CliResult<(Vec<f64>, Vec<usize>)> {
    let meta_path = dir.join(format!("{name}.meta"));
    let meta = read_meta(&meta_path)?;
    let schema = meta_get(&meta, "schema", &meta_path)?;
    if schema != SCHEMA {
        return Err(CliError::config(format!(
            "{}: schema {schema} not recognized; this build reads {SCHEMA}",
            meta_path.display()
        )));
    }
    let dtype = meta_get(&meta, "dtype", &meta_path)?;
    let order = meta_get(&meta, "order", &meta_path)?;
    if dtype != "f64-le" || order != "row-major" {
        return Err(CliError::config(format!(
            "{}: unsupported layout {dtype}/{order}",
            meta_path.display()
        )));
    }
    let shape: Vec<usize> = meta_get(&meta, "shape", &meta_path)?
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|_| {
                CliError::config(format!("{}: bad shape entry {t:?}", meta_path.display()))
            })
        })
        .collect::<CliResult<_>>()?;
    let total: usize = shape.iter().product();

    let bin_path = dir.join(format!("{name}.bin"));
    let mut bytes = Vec::new();
    fs::File::open(&bin_path)
        .map_err(|e| io_err("opening", &bin_path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err("reading", &bin_path, e))?;
    if bytes.len() != 8 * total {
        return Err(CliError::config(format!(
            "{}: payload is {} bytes, shape wants {}",
            bin_path.display(),
            bytes.len(),
            8 * total
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((values, shape))
}

// ---------------------------------------------------------------------------
// Trace CSV.

/// Streams one CSV row per sweep while the chain runs.
pub struct TraceSink<W: Write> {
    w: W,
}

impl TraceSink<BufWriter<fs::File>> {
    pub fn create(path: &Path, hash: &str) -> CliResult<Self> {
        let f = fs::File::create(path).map_err(|e| io_err("creating", path, e))?;
        let mut w = BufWriter::new(f);
        write!(
            w,
            "# schema = {SCHEMA}\n# manifest_hash = {hash}\nstep,tau,phi,accept_u,accept_tau\n"
        )
        .map_err(|e| io_err("writing", path, e))?;
        Ok(TraceSink { w })
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.w.flush()
    }
}

impl<W: Write> StepSink for TraceSink<W> {
    fn record(&mut self, r: &StepRecord) -> hierls_core::Result<()> {
        writeln!(
            self.w,
            "{},{},{},{},{}",
            r.step,
            fmt_f64(r.tau),
            fmt_f64(r.phi),
            u8::from(r.accept_u),
            u8::from(r.accept_tau)
        )
        .map_err(|e| CoreError::config(format!("trace write failed: {e}")))
    }
}

// ---------------------------------------------------------------------------
// Data CSV.

pub fn write_data_csv(path: &Path, hash: &str, data: &DataVector) -> CliResult<()> {
    let f = fs::File::create(path).map_err(|e| io_err("creating", path, e))?;
    let mut w = BufWriter::new(f);
    write!(
        w,
        "# schema = {SCHEMA}\n# manifest_hash = {hash}\nindex,value,sigma\n"
    )
    .map_err(|e| io_err("writing", path, e))?;
    for (j, (y, s)) in data.y.iter().zip(&data.sigma).enumerate() {
        writeln!(w, "{j},{},{}", fmt_f64(*y), fmt_f64(*s))
            .map_err(|e| io_err("writing", path, e))?;
    }
    w.flush().map_err(|e| io_err("writing", path, e))
}

pub fn read_data_csv(path: &Path) -> CliResult<DataVector> {
    let f = fs::File::open(path).map_err(|e| io_err("opening", path, e))?;
    let mut y = Vec::new();
    let mut sigma = Vec::new();
    let mut saw_header = false;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| io_err("reading", path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "index,value,sigma" {
                return Err(CliError::config(format!(
                    "{}: expected header index,value,sigma, got {line:?}",
                    path.display()
                )));
            }
            saw_header = true;
            continue;
        }
        let mut parts = line.split(',');
        let (Some(idx), Some(v), Some(s), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(CliError::config(format!(
                "{}: expected three columns, got {line:?}",
                path.display()
            )));
        };
        let idx: usize = idx.trim().parse().map_err(|_| {
            CliError::config(format!("{}: bad index {idx:?}", path.display()))
        })?;
        if idx != y.len() {
            return Err(CliError::config(format!(
                "{}: rows out of order at index {idx}",
                path.display()
            )));
        }
        y.push(parse_f64(v, "observation", path)?);
        sigma.push(parse_f64(s, "noise scale", path)?);
    }
    if !saw_header {
        return Err(CliError::config(format!(
            "{}: no header row found",
            path.display()
        )));
    }
    Ok(DataVector { y, sigma })
}

// ---------------------------------------------------------------------------
// Accumulated statistics (JSON; frames are persisted separately).

#[derive(Serialize, Deserialize)]
pub struct StatsFile {
    pub schema: String,
    pub manifest_hash: String,
    pub experiment: Experiment,
    pub spec: PriorSpec,
    pub levels: LevelSetMap,
    pub n_steps: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub seed: u64,
    pub stats: RunningStats,
}

pub fn write_stats(path: &Path, file: &StatsFile) -> CliResult<()> {
    let f = fs::File::create(path).map_err(|e| io_err("creating", path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, file)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    w.flush().map_err(|e| io_err("writing", path, e))
}

pub fn read_stats(path: &Path) -> CliResult<StatsFile> {
    let f = fs::File::open(path).map_err(|e| io_err("opening", path, e))?;
    let file: StatsFile = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if file.schema != SCHEMA {
        return Err(CliError::config(format!(
            "{}: schema {} not recognized; this build reads {SCHEMA}",
            path.display(),
            file.schema
        )));
    }
    Ok(file)
}

// ---------------------------------------------------------------------------
// Summary.

/// The per-run (or merged) summary scalars, with grid outputs referenced by
/// file name. With nothing retained the scalar block still appears so the
/// zero-sample outcome is explicit.
pub fn write_summary(
    path: &Path,
    hash: &str,
    summary: &Summary,
    grid_shape: &[usize],
) -> CliResult<()> {
    let mut text = String::new();
    text.push_str(&format!("schema = {SCHEMA}\nmanifest_hash = {hash}\n\n"));
    text.push_str("[chain]\n");
    text.push_str(&format!("retained = {}\n", summary.retained));
    text.push_str(&format!("tau_mean = {}\n", fmt_f64(summary.tau_mean)));
    text.push_str(&format!("tau_std = {}\n", fmt_f64(summary.tau_std)));
    text.push_str(&format!("phi_mean = {}\n", fmt_f64(summary.phi_mean)));
    text.push_str(&format!(
        "accept_rate_u = {}\n",
        fmt_f64(summary.accept_rate_u)
    ));
    text.push_str(&format!(
        "accept_rate_tau = {}\n",
        fmt_f64(summary.accept_rate_tau)
    ));
    if summary.retained > 0 {
        let shape_text = grid_shape
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        text.push_str("\n[grids]\n");
        text.push_str(&format!("shape = {shape_text}\n"));
        text.push_str("mean_pushforward = mean_pushforward.bin\n");
        text.push_str("var_pushforward = var_pushforward.bin\n");
        text.push_str("pushforward_of_mean = pushforward_of_mean.bin\n");
        text.push_str("mean_rescaled = mean_rescaled.bin\n");
    }
    fs::write(path, text).map_err(|e| io_err("writing", path, e))
}

/// Parses scalar fields back out of a summary file.
pub fn read_summary_scalars(path: &Path) -> CliResult<Vec<(String, String)>> {
    let meta = read_meta(path)?;
    Ok(meta
        .into_iter()
        .filter(|(k, _)| !k.starts_with('['))
        .collect())
}

// ---------------------------------------------------------------------------
// Histograms.

/// Equal-width bins over the empirical range. A degenerate range puts every
/// sample in the first bin.
pub fn histogram(xs: &[f64], bins: usize) -> (f64, f64, Vec<u64>) {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0u64; bins];
    if xs.is_empty() {
        return (f64::NAN, f64::NAN, counts);
    }
    if !(hi > lo) {
        counts[0] = xs.len() as u64;
        return (lo, hi, counts);
    }
    for &x in xs {
        let idx = (((x - lo) / (hi - lo)) * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    (lo, hi, counts)
}

pub fn write_hist_csv(path: &Path, hash: &str, variable: &str, xs: &[f64]) -> CliResult<()> {
    let (lo, hi, counts) = histogram(xs, HIST_BINS);
    let f = fs::File::create(path).map_err(|e| io_err("creating", path, e))?;
    let mut w = BufWriter::new(f);
    write!(
        w,
        "# schema = {SCHEMA}\n# manifest_hash = {hash}\n# variable = {variable}\n# samples = {}\nbin_lo,bin_hi,count\n",
        xs.len()
    )
    .map_err(|e| io_err("writing", path, e))?;
    let width = if hi > lo { (hi - lo) / HIST_BINS as f64 } else { 0.0 };
    for (i, c) in counts.iter().enumerate() {
        let b_lo = lo + width * i as f64;
        let b_hi = if i + 1 == HIST_BINS { hi } else { lo + width * (i + 1) as f64 };
        writeln!(w, "{},{},{c}", fmt_f64(b_lo), fmt_f64(b_hi))
            .map_err(|e| io_err("writing", path, e))?;
    }
    w.flush().map_err(|e| io_err("writing", path, e))
}

pub fn write_hist2d_csv(
    path: &Path,
    hash: &str,
    x_var: &str,
    y_var: &str,
    xs: &[f64],
    ys: &[f64],
) -> CliResult<()> {
    assert_eq!(xs.len(), ys.len());
    let (xlo, xhi, _) = histogram(xs, HIST_BINS);
    let (ylo, yhi, _) = histogram(ys, HIST_BINS);
    let mut counts = vec![0u64; HIST_BINS * HIST_BINS];
    let place = |v: f64, lo: f64, hi: f64| -> usize {
        if hi > lo {
            ((((v - lo) / (hi - lo)) * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
        } else {
            0
        }
    };
    for (&x, &y) in xs.iter().zip(ys) {
        counts[place(x, xlo, xhi) * HIST_BINS + place(y, ylo, yhi)] += 1;
    }
    let f = fs::File::create(path).map_err(|e| io_err("creating", path, e))?;
    let mut w = BufWriter::new(f);
    write!(
        w,
        "# schema = {SCHEMA}\n# manifest_hash = {hash}\n# x = {x_var}\n# y = {y_var}\n# samples = {}\nx_lo,x_hi,y_lo,y_hi,count\n",
        xs.len()
    )
    .map_err(|e| io_err("writing", path, e))?;
    let xw = if xhi > xlo { (xhi - xlo) / HIST_BINS as f64 } else { 0.0 };
    let yw = if yhi > ylo { (yhi - ylo) / HIST_BINS as f64 } else { 0.0 };
    for i in 0..HIST_BINS {
        for j in 0..HIST_BINS {
            let c = counts[i * HIST_BINS + j];
            if c == 0 {
                continue;
            }
            writeln!(
                w,
                "{},{},{},{},{c}",
                fmt_f64(xlo + xw * i as f64),
                fmt_f64(xlo + xw * (i + 1) as f64),
                fmt_f64(ylo + yw * j as f64),
                fmt_f64(ylo + yw * (j + 1) as f64)
            )
            .map_err(|e| io_err("writing", path, e))?;
        }
    }
    w.flush().map_err(|e| io_err("writing", path, e))
}
