use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use stnmf::export::{
    read_count_matrix, spatial_geojson, write_count_matrix, write_hour_factor, write_json,
    write_location_factor, write_scan_table, write_temporal_patterns, FactorDiagnostics,
};
use stnmf::ingest::Rejection;
use stnmf::rank::{rank_seed, ScanOptions};
use stnmf::{
    build_matrix, compare_periods, factorize_best, match_patterns, minmax_normalize, parse_records,
    rank_scan, summary_text, to_count_scale, CountMatrix, FactorPair, NmfConfig, PatternSet,
    RankScanResult, SyntheticPairSpec, SyntheticSpec,
};

use crate::config::{Period, PipelineConfig};
use crate::error::{CliError, CliResult};

/// Present in the output directory while `run` has not finished cleanly.
pub const INCOMPLETE_MARKER: &str = "RUN_INCOMPLETE";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::file(path, e))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> stnmf::Result<()>,
) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| CliError::file(path, e))?;
    w.flush().map_err(|e| CliError::file(path, e))
}

fn ensure_out_dir(cfg: &PipelineConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::file(&cfg.out, e))
}

fn open_existing(path: &Path) -> CliResult<BufReader<File>> {
    if !path.exists() {
        return Err(CliError::MissingInput {
            path: path.to_path_buf(),
        });
    }
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::file(path, e))
}

/// Periods to process: A always, B when it has an input or, for later
/// stages, a matrix on disk.
fn periods_with_inputs(cfg: &PipelineConfig) -> CliResult<Vec<Period>> {
    if cfg.input_a.is_none() {
        return Err(CliError::Usage("--input-a is required".into()));
    }
    Ok(Period::BOTH
        .into_iter()
        .filter(|&p| cfg.input(p).is_some())
        .collect())
}

fn periods_on_disk(cfg: &PipelineConfig) -> Vec<Period> {
    Period::BOTH
        .into_iter()
        .filter(|&p| p == Period::A || cfg.out_path(&matrix_name(p)).exists())
        .collect()
}

fn matrix_name(p: Period) -> String {
    format!("matrix_{}.csv", p.tag())
}

fn load_matrix(cfg: &PipelineConfig, p: Period) -> CliResult<CountMatrix> {
    let path = cfg.out_path(&matrix_name(p));
    read_count_matrix(open_existing(&path)?).map_err(|e| CliError::file(path, e))
}

#[derive(Debug, Serialize)]
struct IngestReport {
    period: String,
    input: String,
    records: usize,
    rejected: usize,
    skipped_other_period: usize,
    rejection_samples: Vec<Rejection>,
    locations: usize,
    hours: Vec<u32>,
    total: f64,
}

/// Reads the raw tables, writes `matrix_{a,b}.csv` and `ingest_{a,b}.json`.
pub fn cmd_ingest(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    cfg.validate()?;
    let window = cfg.hour_window()?;
    let periods = periods_with_inputs(cfg)?;
    ensure_out_dir(cfg)?;
    for p in periods {
        let path = cfg.input(p).expect("filtered on input");
        let parsed = parse_records(open_existing(path)?, &cfg.parse_options(p))
            .map_err(|e| CliError::file(path, e))?;
        let matrix = build_matrix(&parsed.records, window).map_err(|e| CliError::file(path, e))?;
        write_with(&cfg.out_path(&matrix_name(p)), |w| {
            write_count_matrix(w, &matrix)
        })?;
        let (n, m) = matrix.shape();
        let report = IngestReport {
            period: matrix.period().to_string(),
            input: path.display().to_string(),
            records: parsed.records.len(),
            rejected: parsed.rejected,
            skipped_other_period: parsed.skipped_other_period,
            rejection_samples: parsed.rejection_samples,
            locations: n,
            hours: matrix.hours().to_vec(),
            total: matrix.total(),
        };
        write_with(&cfg.out_path(&format!("ingest_{}.json", p.tag())), |w| {
            write_json(w, &report)
        })?;
        let _ = writeln!(
            out,
            "period {} ({}): {n} locations × {m} hours, {} records, {} rejected",
            p.tag().to_uppercase(),
            report.period,
            report.records,
            report.rejected,
        );
        for r in report.rejection_samples.iter().take(5) {
            let _ = writeln!(out, "  {}:{}: {}", path.display(), r.line, r.reason);
        }
    }
    Ok(())
}

fn scan_options(cfg: &PipelineConfig) -> ScanOptions {
    ScanOptions {
        side: cfg.side,
        space: cfg.space,
        restarts: cfg.restarts,
    }
}

/// Scores every rank in the range on each period's matrix; writes
/// `scan_{a,b}.csv` and `scan_{a,b}.json`.
pub fn cmd_rank_scan(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    cfg.validate()?;
    let ranks = cfg.rank_range()?;
    for p in periods_on_disk(cfg) {
        let matrix = load_matrix(cfg, p)?;
        let x = minmax_normalize(&matrix);
        let period = || matrix.period().to_string();
        let scan = rank_scan(
            x.values().view(),
            &ranks,
            &cfg.nmf_template(),
            scan_options(cfg),
        )
        .map_err(|source| CliError::Period {
            period: period(),
            source,
        })?;
        write_with(&cfg.out_path(&format!("scan_{}.csv", p.tag())), |w| {
            write_scan_table(w, &scan)
        })?;
        write_with(&cfg.out_path(&format!("scan_{}.json", p.tag())), |w| {
            write_json(w, &scan)
        })?;
        for (rank, reason) in &scan.failed {
            let _ = writeln!(out, "period {}: rank {rank} failed: {reason}", period());
        }
        let _ = writeln!(
            out,
            "period {} recommended rank: {}",
            period(),
            scan.recommended_rank
        );
    }
    Ok(())
}

fn chosen_rank(cfg: &PipelineConfig, p: Period) -> CliResult<usize> {
    if let Some(r) = cfg.fixed_rank(p) {
        return Ok(r);
    }
    let path = cfg.out_path(&format!("scan_{}.json", p.tag()));
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "no rank for period {}: pass --rank-{} or run rank-scan first",
            p.tag().to_uppercase(),
            p.tag()
        )));
    }
    let scan: RankScanResult =
        serde_json::from_reader(open_existing(&path)?).map_err(|e| CliError::file(&path, e))?;
    Ok(scan.recommended_rank)
}

struct Factorized {
    period: Period,
    matrix: CountMatrix,
    config: NmfConfig,
    pair: FactorPair,
    patterns: PatternSet,
}

fn factorize_period(cfg: &PipelineConfig, p: Period, rank: usize) -> CliResult<Factorized> {
    let matrix = load_matrix(cfg, p)?;
    let x = minmax_normalize(&matrix);
    let template = cfg.nmf_template();
    let config = NmfConfig {
        rank,
        seed: rank_seed(template.seed, rank),
        ..template
    };
    let wrap = |source| CliError::Period {
        period: matrix.period().to_string(),
        source,
    };
    let pair = factorize_best(x.values().view(), &config, cfg.restarts).map_err(wrap)?;
    let counts = to_count_scale(&pair, x.scaling()).map_err(wrap)?;
    let patterns =
        stnmf::extract_patterns(&counts, x.locations(), x.hours(), x.period()).map_err(wrap)?;
    Ok(Factorized {
        period: p,
        matrix,
        config,
        pair,
        patterns,
    })
}

fn write_factorized(cfg: &PipelineConfig, f: &Factorized) -> CliResult<()> {
    let tag = f.period.tag();
    write_with(
        &cfg.out_path(&format!("factors_{tag}_locations.csv")),
        |w| write_location_factor(w, f.matrix.locations(), f.pair.w.view()),
    )?;
    write_with(&cfg.out_path(&format!("factors_{tag}_hours.csv")), |w| {
        write_hour_factor(w, f.matrix.hours(), f.pair.h.view())
    })?;
    let diag = FactorDiagnostics::new(f.matrix.period(), &f.config, &f.pair);
    write_with(&cfg.out_path(&format!("diagnostics_{tag}.json")), |w| {
        write_json(w, &diag)
    })?;
    write_with(&cfg.out_path(&format!("temporal_{tag}.csv")), |w| {
        write_temporal_patterns(w, &f.patterns)
    })?;
    write_with(&cfg.out_path(&format!("spatial_{tag}.geojson")), |w| {
        write_json(w, &spatial_geojson(&f.patterns))
    })
}

/// Factorizes each period at its fixed or recommended rank and writes factor
/// tables and pattern exports. With both periods present it also writes
/// `comparison.json` and `summary.txt`.
pub fn cmd_factorize(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    cfg.validate()?;
    let periods = periods_on_disk(cfg);
    let ranks = periods
        .iter()
        .map(|&p| chosen_rank(cfg, p))
        .collect::<CliResult<Vec<_>>>()?;
    let results: Vec<CliResult<Factorized>> = std::thread::scope(|s| {
        let handles: Vec<_> = periods
            .iter()
            .zip(&ranks)
            .map(|(&p, &r)| s.spawn(move || factorize_period(cfg, p, r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("factorization thread panicked"))
            .collect()
    });
    let done = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    for f in &done {
        write_factorized(cfg, f)?;
        let _ = writeln!(
            out,
            "period {}: rank {}, {} iterations, loss {:.6}{}",
            f.matrix.period(),
            f.config.rank,
            f.pair.iterations_run,
            f.pair.final_loss(),
            if f.pair.converged {
                ""
            } else {
                " (not converged)"
            },
        );
    }
    if let [a, b] = done.as_slice() {
        let matching = match_patterns(&a.patterns, &b.patterns, cfg.threshold)?;
        let report = compare_periods(&a.matrix, &b.matrix, &matching, &a.patterns, &b.patterns)?;
        write_with(&cfg.out_path("comparison.json"), |w| write_json(w, &report))?;
        let text = summary_text(&report);
        write_with(&cfg.out_path("summary.txt"), |w| {
            w.write_all(text.as_bytes()).map_err(Into::into)
        })?;
        let _ = write!(out, "{text}");
    }
    Ok(())
}

/// The whole pipeline: ingest, rank scan, factorize and compare.
///
/// A marker file sits in the output directory until the run succeeds; on
/// failure it holds the error.
pub fn cmd_run(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    cfg.validate()?;
    if cfg.input_b.is_none() {
        return Err(CliError::Usage(
            "run needs both --input-a and --input-b".into(),
        ));
    }
    ensure_out_dir(cfg)?;
    let marker = cfg.out_path(INCOMPLETE_MARKER);
    fs::write(&marker, "running\n").map_err(|e| CliError::file(&marker, e))?;
    let result = cmd_ingest(cfg, out)
        .and_then(|_| cmd_rank_scan(cfg, out))
        .and_then(|_| cmd_factorize(cfg, out));
    match &result {
        Ok(()) => fs::remove_file(&marker).map_err(|e| CliError::file(&marker, e))?,
        Err(e) => {
            let _ = fs::write(&marker, format!("failed: {e}\n"));
        }
    }
    result
}

/// Settings of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub spec: SyntheticSpec,
    /// Patterns of A missing from B; `None` writes a single period.
    pub drop: Option<usize>,
    pub count_scale: f64,
    pub period_b: String,
    pub out: std::path::PathBuf,
}

#[derive(Debug, Serialize)]
struct SynthReport<'a> {
    spec: &'a SyntheticSpec,
    kept_patterns: Option<&'a [usize]>,
    count_scale: Option<f64>,
    locations: usize,
    hours: usize,
    records: usize,
    total: f64,
    measured_noise: f64,
}

fn write_synthetic(
    cfg: &SynthConfig,
    tag: &str,
    spec: &SyntheticSpec,
    pair: Option<&SyntheticPairSpec>,
    data: &stnmf::SyntheticData,
    out: &mut dyn Write,
) -> CliResult<()> {
    let path = cfg.out.join(format!("records_{tag}.csv"));
    write_with(&path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "count_point_id",
            "year",
            "hour",
            "latitude",
            "longitude",
            "all_motor_vehicles",
        ])?;
        for r in &data.records {
            csv.write_record([
                r.location_id.clone(),
                r.period.clone(),
                r.hour.to_string(),
                r.latitude.to_string(),
                r.longitude.to_string(),
                r.count.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    write_with(&cfg.out.join(format!("planted_{tag}_locations.csv")), |w| {
        write_location_factor(w, &data.locations, data.planted_w.view())
    })?;
    write_with(&cfg.out.join(format!("planted_{tag}_hours.csv")), |w| {
        write_hour_factor(w, &data.hours, data.planted_h.view())
    })?;
    let report = SynthReport {
        spec,
        kept_patterns: pair.map(|p| p.keep.as_slice()),
        count_scale: pair.map(|p| p.count_scale),
        locations: data.locations.len(),
        hours: data.hours.len(),
        records: data.records.len(),
        total: data.counts.sum(),
        measured_noise: data.measured_noise,
    };
    write_with(&cfg.out.join(format!("synth_{tag}.json")), |w| {
        write_json(w, &report)
    })?;
    let _ = writeln!(
        out,
        "period {}: {} locations × {} hours, {} records, noise {:.4} -> {}",
        spec.period,
        report.locations,
        report.hours,
        report.records,
        report.measured_noise,
        path.display(),
    );
    Ok(())
}

/// Writes planted-factor record tables, `records_a.csv` and, with a drop
/// count, `records_b.csv`, plus the planted factors.
pub fn cmd_synth(cfg: &SynthConfig, out: &mut dyn Write) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::file(&cfg.out, e))?;
    match cfg.drop {
        None => {
            let data = stnmf::generate(&cfg.spec)?;
            write_synthetic(cfg, "a", &cfg.spec, None, &data, out)
        }
        Some(drop) => {
            if !(cfg.count_scale > 0.0 && cfg.count_scale.is_finite()) {
                return Err(CliError::Usage("--scale must be positive".into()));
            }
            let mut pair = SyntheticPairSpec::dropping(cfg.spec.clone(), drop, cfg.count_scale);
            pair.period_b = cfg.period_b.clone();
            let (a, b) = stnmf::generate_pair(&pair)?;
            let spec_b = SyntheticSpec {
                period: pair.period_b.clone(),
                n_locations: pair.n_locations_b,
                planted_rank: pair.keep.len(),
                ..cfg.spec.clone()
            };
            write_synthetic(cfg, "a", &cfg.spec, None, &a, out)?;
            write_synthetic(cfg, "b", &spec_b, Some(&pair), &b, out)
        }
    }
}
