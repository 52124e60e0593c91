use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use colonmapper::eval::compare_with_baseline;
use colonmapper::localizer::{build_query_nodes, run_filter_timed};
use colonmapper::{
    classify_decision, compute_metrics, emit_posterior_trace, emit_timeline, generate_session,
    generate_world, load_decisions, load_descriptors, load_map, load_truth, save_decisions,
    save_descriptors, save_map, save_match_cache, save_truth, session_seed, DecisionsFile,
    DescriptorSet, Localizer, Mapper, MappingConfig, MatchCache, MatchOracle, Report,
    SyntheticMatchParams, SyntheticMatcher, Verdict,
};

use crate::settings::{usage, ConfigFile};
use crate::{EvalArgs, LocalizeArgs, MapArgs, SimulateArgs};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_SESSIONS: usize = 2;

/// Mean and nearest-rank percentiles of per-item costs.
fn timing_summary(label: &str, samples: &[Duration]) -> String {
    if samples.is_empty() {
        return format!("{label}: no samples");
    }
    let mut us: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e6).collect();
    us.sort_by(f64::total_cmp);
    let rank = |p: f64| us[((p * us.len() as f64).ceil() as usize).clamp(1, us.len()) - 1];
    let mean = us.iter().sum::<f64>() / us.len() as f64;
    format!(
        "{label}: n={} mean={mean:.1}us p50={:.1}us p95={:.1}us max={:.1}us",
        us.len(),
        rank(0.5),
        rank(0.95),
        us[us.len() - 1]
    )
}

/// Every pair of a session no more than `window` frames apart.
fn window_cache(
    frames: &DescriptorSet,
    window: usize,
    oracle: &impl MatchOracle,
) -> Result<MatchCache> {
    let frames = frames.frames();
    let mut cache = MatchCache::new();
    for (i, a) in frames.iter().enumerate() {
        for b in frames.iter().skip(i + 1).take(window) {
            cache.insert(a.frame_id, b.frame_id, oracle.match_count(a, b)?);
        }
    }
    Ok(cache)
}

pub fn simulate(args: &SimulateArgs, file: &ConfigFile) -> Result<()> {
    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let world_params = args.synth.world(
        file,
        args.places.map(|v| v as usize),
        args.regions.map(|v| v as usize),
        seed,
    )?;
    let sessions = args
        .sessions
        .map(|v| v as usize)
        .or(file.sessions)
        .unwrap_or(DEFAULT_SESSIONS);
    if sessions == 0 {
        return Err(usage("sessions must be >= 1"));
    }
    let max_skips = args
        .max_skips
        .or(file.max_skips)
        .unwrap_or(MappingConfig::default().max_skips);
    let session_params = (1..=sessions)
        .map(|k| args.synth.session(file, session_seed(seed, k)))
        .collect::<Result<Vec<_>>>()?;

    let world = generate_world(&world_params)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let matcher = SyntheticMatcher::new(SyntheticMatchParams {
        seed,
        ..Default::default()
    })?;
    for (k, params) in (1..).zip(&session_params) {
        let (frames, truth) = generate_session(&world, params)?;
        let base = args.out_dir.join(format!("session_{k}"));
        let descriptors = base.with_extension("cmd1");
        let truth_path = base.with_extension("truth.json");
        save_descriptors(&frames, &descriptors)?;
        save_truth(&truth, &truth_path)?;
        print!(
            "session {k}: {} frames -> {}, {}",
            frames.len(),
            descriptors.display(),
            truth_path.display()
        );
        if args.match_cache {
            let cache = window_cache(&frames, max_skips as usize + 1, &matcher)?;
            let cache_path = base.with_extension("matches.txt");
            save_match_cache(&cache, &cache_path)?;
            print!(", {} ({} pairs)", cache_path.display(), cache.len());
        }
        println!();
    }
    Ok(())
}

fn default_events_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".events.jsonl");
    PathBuf::from(name)
}

pub fn map(args: &MapArgs, file: &ConfigFile) -> Result<()> {
    let config = args.mapping.resolve(file, MappingConfig::default())?;
    let oracle = args.oracle.resolve(file)?;
    let frames = load_descriptors(&args.descriptors)
        .with_context(|| format!("reading {}", args.descriptors.display()))?;

    let mut mapper = Mapper::new(config, &oracle)?;
    let mut events = Vec::new();
    let mut timings = Vec::with_capacity(frames.len());
    for frame in frames.into_frames() {
        let start = Instant::now();
        events.extend(mapper.process_frame(frame)?);
        timings.push(start.elapsed());
    }
    let (map, last) = mapper.finalize();
    events.extend(last);

    save_map(&map, &args.out)?;
    let events_path = args
        .events
        .clone()
        .unwrap_or_else(|| default_events_path(&args.out));
    let mut log = Vec::new();
    for event in &events {
        serde_json::to_writer(&mut log, event)?;
        log.push(b'\n');
    }
    fs::write(&events_path, log).with_context(|| format!("writing {}", events_path.display()))?;

    if map.is_empty() {
        eprintln!(
            "warning: no proto-node reached {} frames; the map is empty",
            config.min_node_images
        );
    }
    println!("nodes: {}", map.len());
    let sizes: Vec<String> = map.nodes().iter().map(|n| n.len().to_string()).collect();
    println!("node frames: {}", sizes.join(" "));
    println!("{}", timing_summary("mapping time per frame", &timings));
    Ok(())
}

pub fn localize(args: &LocalizeArgs, file: &ConfigFile) -> Result<()> {
    let map = load_map(&args.map).with_context(|| format!("reading {}", args.map.display()))?;
    let mapping = args.mapping.resolve(file, *map.config())?;
    let config = args.localization.resolve(file)?;
    let oracle = args.oracle.resolve(file)?;
    let frames = load_descriptors(&args.descriptors)
        .with_context(|| format!("reading {}", args.descriptors.display()))?;

    let localizer = Localizer::new(&map, config)?.with_parallel(args.localization.parallel(file));
    let start = Instant::now();
    let queries = build_query_nodes(&frames, &mapping, config.query_node_size, &oracle)?;
    let gate_time = start.elapsed();
    let n_queries = queries.len();
    let (run, timings) = run_filter_timed(&localizer, queries)?;

    save_decisions(&DecisionsFile::new(config, &run, args.trace), &args.out)?;
    println!("query nodes: {n_queries}");
    println!("accepted: {}", run.decisions.len());
    println!(
        "query node gate: {:.1}us per frame",
        gate_time.as_secs_f64() * 1e6 / frames.len().max(1) as f64
    );
    println!("{}", timing_summary("filter step per query node", &timings));
    Ok(())
}

fn fmt_ratio(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

pub fn eval(args: &EvalArgs, file: &ConfigFile) -> Result<()> {
    if args.baseline && (args.descriptors.is_none() || !args.oracle.is_set()) {
        return Err(usage(
            "--baseline needs --descriptors and --match-cache or --synthetic-oracle",
        ));
    }
    let doc = load_decisions(&args.decisions)
        .with_context(|| format!("reading {}", args.decisions.display()))?;
    let map = load_map(&args.map).with_context(|| format!("reading {}", args.map.display()))?;
    let query_truth =
        load_truth(&args.truth).with_context(|| format!("reading {}", args.truth.display()))?;
    let map_truth = load_truth(&args.map_truth)
        .with_context(|| format!("reading {}", args.map_truth.display()))?;

    let verdicts = doc
        .decisions
        .iter()
        .map(|d| classify_decision(d, &query_truth, &map, &map_truth))
        .collect::<Result<Vec<Verdict>, _>>()?;
    let metrics = compute_metrics(&doc.decisions, &verdicts, &query_truth)?;
    let mut report = Report::new(metrics.clone(), &doc.decisions, &verdicts);

    if args.baseline {
        let path = args.descriptors.as_ref().expect("checked above");
        let frames =
            load_descriptors(path).with_context(|| format!("reading {}", path.display()))?;
        let oracle = args.oracle.resolve(file)?;
        let localizer = Localizer::new(&map, doc.config)?;
        let queries =
            build_query_nodes(&frames, map.config(), doc.config.query_node_size, &oracle)?;
        let comparison =
            compare_with_baseline(&localizer, &queries, &verdicts, &query_truth, &map_truth)?;
        println!(
            "baseline at {} acceptances: same-place {}, region-or-better {}",
            comparison.baseline_matched.accepted,
            fmt_ratio(comparison.baseline_matched.same_place_precision),
            fmt_ratio(comparison.baseline_matched.region_or_better_precision),
        );
        report.baseline = Some(comparison);
    }

    let mut out =
        fs::File::create(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    out.write_all(report.to_json().as_bytes())?;

    if let Some(path) = &args.timeline {
        emit_timeline(
            &doc.decisions,
            &verdicts,
            &query_truth,
            &map,
            &map_truth,
            path,
        )?;
    }
    if let Some(path) = &args.posterior {
        if doc.trace.is_empty() {
            anyhow::bail!(
                "{} has no posterior trace; rerun localize with --trace",
                args.decisions.display()
            );
        }
        let localizer = Localizer::new(&map, doc.config)?;
        let accepted: Vec<usize> = doc.decisions.iter().map(|d| d.query_node_index).collect();
        emit_posterior_trace(&doc.trace, &localizer, &accepted, path)?;
    }

    println!(
        "accepted: {} (same place {}, same region {}, erroneous {})",
        metrics.accepted, metrics.same_place, metrics.same_region, metrics.erroneous
    );
    println!(
        "same-place precision: {}",
        fmt_ratio(metrics.same_place_precision)
    );
    println!(
        "region-or-better precision: {}",
        fmt_ratio(metrics.region_or_better_precision)
    );
    println!("coverage: {}", fmt_ratio(metrics.coverage));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_percentiles() {
        let samples: Vec<Duration> = (1..=100).map(Duration::from_micros).collect();
        let line = timing_summary("t", &samples);
        assert!(line.contains("n=100"), "{line}");
        assert!(line.contains("p50=50.0us"), "{line}");
        assert!(line.contains("p95=95.0us"), "{line}");
        assert_eq!(timing_summary("t", &[]), "t: no samples");
    }

    #[test]
    fn events_path_appends_suffix() {
        assert_eq!(
            default_events_path(Path::new("out/map.json")),
            PathBuf::from("out/map.json.events.jsonl")
        );
    }
}
