//! Subcommand implementations: each one resolves settings, reads its
//! inputs, calls into the library, and writes its artifacts.

use crate::settings::{resolve, Settings};
use crate::{Cli, CliError, Command};
use phasedet::eval::{evaluate, EvalReport};
use phasedet::ingest::{
    parse_charge_csv, parse_sensor_csv, resample, write_charge_csv, write_sensor_csv, ChargeLog,
    NormStats, TimeSeries, UniformSeries,
};
use phasedet::label::{generate_labels, LabelConfig};
use phasedet::model::{history_to_csv, load_model_with_stats, save_model_with_stats, ModelParams};
use phasedet::peaks::{
    events_to_csv, extract_events, parse_events_csv, EventKind, PhaseEvent,
};
use phasedet::pipeline::{
    predict_on_segments, run_end_to_end, train_detector, PipelineParams,
};
use phasedet::synth::generate;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let st = resolve(cli)?;
    match &cli.command {
        Command::Generate { sensor_out, charges_out } => cmd_generate(&st, sensor_out, charges_out),
        Command::Label { sensor, charges, labels_out } => {
            cmd_label(&st, sensor, charges, labels_out)
        }
        Command::Train { sensor, charges, model_out, history_out } => {
            cmd_train(&st, sensor, charges, model_out, history_out)
        }
        Command::Predict { sensor, model, events_out, predictions_out } => {
            cmd_predict(&st, sensor, model, events_out, predictions_out)
        }
        Command::Evaluate { events, charges, report_out } => {
            cmd_evaluate(cli, &st, events, charges, report_out)
        }
        Command::Pipeline => cmd_pipeline(cli, &st),
        Command::ExportPlot { sensor, charges, model, plot_out } => {
            cmd_export_plot(&st, sensor, charges, model, plot_out)
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Reads a required input file; a missing path is a usage error so the
/// process exits 2, matching bad-flag behavior.
fn read_input(path: &Path) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("input file not found: {}", path.display())));
    }
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                CliError::Runtime(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_sensor(path: &Path) -> Result<TimeSeries, CliError> {
    let text = read_input(path)?;
    let (series, dropped) = parse_sensor_csv(&text).map_err(runtime)?;
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} malformed rows from {}", path.display());
    }
    Ok(series)
}

fn load_charges(path: &Path) -> Result<ChargeLog, CliError> {
    let text = read_input(path)?;
    parse_charge_csv(&text).map_err(runtime)
}

fn load_model_file(path: &Path) -> Result<(ModelParams, NormStats), CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("input file not found: {}", path.display())));
    }
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let (model, stats) = load_model_with_stats(&bytes).map_err(runtime)?;
    let stats = stats.ok_or_else(|| {
        CliError::Runtime(format!(
            "model file {} carries no normalization stats; retrain it with `phasedet train`",
            path.display()
        ))
    })?;
    Ok((model, stats))
}

fn segments_of(series: &TimeSeries, p: &PipelineParams) -> Result<Vec<UniformSeries>, CliError> {
    let (segments, _dropped) = resample(series, p.dt, p.gap_threshold).map_err(runtime)?;
    Ok(segments)
}

fn kind_order(k: EventKind) -> u8 {
    match k {
        EventKind::Start => 0,
        EventKind::End => 1,
    }
}

/// Extracts events from every prediction curve and merges them in
/// chronological order, starts before ends at equal timestamps.
fn events_from_curves(
    curves: &[phasedet::peaks::PredictionSeries],
    p: &PipelineParams,
) -> Result<Vec<PhaseEvent>, CliError> {
    let mut events = Vec::new();
    for curve in curves {
        events.extend(extract_events(curve, p.threshold, p.min_separation).map_err(runtime)?);
    }
    events.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then_with(|| kind_order(a.kind).cmp(&kind_order(b.kind)))
    });
    Ok(events)
}

/// JSON evaluation report; the timestamp is omitted under --no-timestamps
/// so repeated runs produce identical bytes.
#[derive(Serialize)]
struct ReportDoc<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn report_json(cli: &Cli, report: &EvalReport) -> String {
    let generated_at =
        (!cli.no_timestamps).then(|| chrono::Utc::now().to_rfc3339());
    let doc = ReportDoc { generated_at, report };
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    text
}

fn cmd_generate(
    st: &Settings,
    sensor_out: &Option<PathBuf>,
    charges_out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let (series, log) = generate(&st.synth).map_err(runtime)?;
    let sensor_path = st.sensor_path(sensor_out);
    let charges_path = st.charges_path(charges_out);
    write_output(&sensor_path, write_sensor_csv(&series).as_bytes())?;
    write_output(&charges_path, write_charge_csv(&log).as_bytes())?;
    println!("wrote {} samples to {}", series.len(), sensor_path.display());
    println!("wrote {} charges to {}", log.len(), charges_path.display());
    Ok(())
}

/// Labels CSV over (possibly several) resampled segments.
fn labels_csv(segments: &[UniformSeries], log: &ChargeLog, p: &PipelineParams) -> Result<String, CliError> {
    let cfg = LabelConfig { t_sw: p.t_sw, ..LabelConfig::default() };
    let mut out = String::from("segment,ts,label\n");
    for (id, seg) in segments.iter().enumerate() {
        let labels = generate_labels(seg, log, &cfg).map_err(runtime)?;
        for (i, l) in labels.labels().iter().enumerate() {
            out.push_str(&format!("{id},{},{l}\n", labels.timestamp(i)));
        }
    }
    Ok(out)
}

fn cmd_label(
    st: &Settings,
    sensor: &Option<PathBuf>,
    charges: &Option<PathBuf>,
    labels_out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let series = load_sensor(&st.sensor_path(sensor))?;
    let log = load_charges(&st.charges_path(charges))?;
    let segments = segments_of(&series, &st.params)?;
    let out_path = st.path_or_default(labels_out, "labels.csv");
    let csv = labels_csv(&segments, &log, &st.params)?;
    write_output(&out_path, csv.as_bytes())?;
    let total: usize = segments.iter().map(|s| s.len()).sum();
    println!(
        "wrote {} labels across {} segments to {}",
        total,
        segments.len(),
        out_path.display()
    );
    Ok(())
}

fn cmd_train(
    st: &Settings,
    sensor: &Option<PathBuf>,
    charges: &Option<PathBuf>,
    model_out: &Option<PathBuf>,
    history_out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let series = load_sensor(&st.sensor_path(sensor))?;
    let log = load_charges(&st.charges_path(charges))?;
    let detector = train_detector(&series, &log, &st.params).map_err(runtime)?;
    let model_path = st.model_path(model_out);
    write_output(&model_path, &save_model_with_stats(&detector.model, Some(&detector.stats)))?;
    let final_loss = detector.history.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained on {} of {} windows over {} epochs, final loss {final_loss:.6e}",
        detector.windows_kept,
        detector.windows_total,
        detector.history.len(),
    );
    if detector.segments_too_short > 0 {
        println!("skipped {} segments shorter than one window", detector.segments_too_short);
    }
    println!("wrote model to {}", model_path.display());
    if let Some(history_path) = history_out {
        write_output(history_path, history_to_csv(&detector.history).as_bytes())?;
        println!("wrote training history to {}", history_path.display());
    }
    Ok(())
}

fn cmd_predict(
    st: &Settings,
    sensor: &Option<PathBuf>,
    model: &Option<PathBuf>,
    events_out: &Option<PathBuf>,
    predictions_out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let series = load_sensor(&st.sensor_path(sensor))?;
    let (model, stats) = load_model_file(&st.model_path(model))?;
    let segments = segments_of(&series, &st.params)?;
    let curves = predict_on_segments(&model, &stats, &segments, &st.params).map_err(runtime)?;
    let events = events_from_curves(&curves, &st.params)?;

    let events_path = st.path_or_default(events_out, "events.csv");
    write_output(&events_path, events_to_csv(&events).as_bytes())?;
    let starts = events.iter().filter(|e| e.kind == EventKind::Start).count();
    println!(
        "detected {} events ({} starts, {} ends)",
        events.len(),
        starts,
        events.len() - starts
    );
    println!("wrote events to {}", events_path.display());

    if let Some(pred_path) = predictions_out {
        let mut csv = String::from("segment,ts,pred\n");
        for curve in &curves {
            for (i, v) in curve.values().iter().enumerate() {
                csv.push_str(&format!("{},{},{v}\n", curve.segment_id(), curve.timestamp(i)));
            }
        }
        write_output(pred_path, csv.as_bytes())?;
        println!("wrote prediction curves to {}", pred_path.display());
    }
    Ok(())
}

fn cmd_evaluate(
    cli: &Cli,
    st: &Settings,
    events: &Option<PathBuf>,
    charges: &Option<PathBuf>,
    report_out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let events_path = st.path_or_default(events, "events.csv");
    let events = parse_events_csv(&read_input(&events_path)?).map_err(runtime)?;
    let log = load_charges(&st.charges_path(charges))?;
    let report = evaluate(&events, &log, st.params.tolerance).map_err(runtime)?;
    print!("{report}");
    let report_path = st.path_or_default(report_out, "report.json");
    write_output(&report_path, report_json(cli, &report).as_bytes())?;
    println!("wrote report to {}", report_path.display());
    Ok(())
}

fn cmd_pipeline(cli: &Cli, st: &Settings) -> Result<(), CliError> {
    let (series, log) = generate(&st.synth).map_err(runtime)?;
    write_output(&st.sensor_path(&None), write_sensor_csv(&series).as_bytes())?;
    write_output(&st.charges_path(&None), write_charge_csv(&log).as_bytes())?;

    let out = run_end_to_end(&series, &log, &st.params).map_err(runtime)?;
    let model_path = st.model_path(&None);
    write_output(
        &model_path,
        &save_model_with_stats(&out.detector.model, Some(&out.detector.stats)),
    )?;
    write_output(
        &st.path_or_default(&None, "events.csv"),
        events_to_csv(&out.events).as_bytes(),
    )?;
    write_output(
        &st.path_or_default(&None, "history.csv"),
        history_to_csv(&out.detector.history).as_bytes(),
    )?;
    write_output(
        &st.path_or_default(&None, "report.json"),
        report_json(cli, &out.report).as_bytes(),
    )?;

    let segments = segments_of(&series, &st.params)?;
    let plot = build_plot_csv(&out.detector.model, &out.detector.stats, &segments, &log, &st.params)?;
    write_output(&st.path_or_default(&None, "plot.csv"), plot.as_bytes())?;

    println!(
        "generated {} charges; trained on {}, held out {} (boundary at {})",
        log.len(),
        out.train_log.len(),
        out.test_log.len(),
        out.boundary
    );
    print!("{}", out.report);
    println!("wrote sensor.csv, charges.csv, model.json, events.csv, history.csv, report.json, plot.csv to {}", st.dir.display());
    Ok(())
}

/// One CSV aligning everything a plot needs: raw channels, the label
/// target, the detector's output, and the extracted events. Cells are
/// empty where a series has no value (window margins, strided samples).
fn build_plot_csv(
    model: &ModelParams,
    stats: &NormStats,
    segments: &[UniformSeries],
    log: &ChargeLog,
    p: &PipelineParams,
) -> Result<String, CliError> {
    let label_cfg = LabelConfig { t_sw: p.t_sw, ..LabelConfig::default() };
    let curves = predict_on_segments(model, stats, segments, p).map_err(runtime)?;
    let half = model.config.window_len / 2;

    let channel_names = segments
        .first()
        .map(|s| s.channel_names().join(","))
        .unwrap_or_default();
    let mut out = format!("segment,ts,{channel_names},label,prediction,event\n");

    for (id, seg) in segments.iter().enumerate() {
        let labels = generate_labels(seg, log, &label_cfg).map_err(runtime)?;
        let curve = curves.iter().find(|c| c.segment_id() == id);
        // Events land exactly on curve grid points, so map each back to
        // its sample index; both kinds can share one row.
        let mut event_cells = vec![String::new(); seg.len()];
        if let Some(curve) = curve {
            for ev in events_from_curves(std::slice::from_ref(curve), p)? {
                let i = ((ev.timestamp - seg.t0()) / seg.dt()).round() as usize;
                if i < event_cells.len() {
                    if !event_cells[i].is_empty() {
                        event_cells[i].push('+');
                    }
                    event_cells[i].push_str(ev.kind.as_str());
                }
            }
        }
        for i in 0..seg.len() {
            let values = seg.values()[i]
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            // The curve covers window centers only: sample i maps to curve
            // index (i - half) / stride when that division is exact.
            let pred_cell = match curve {
                Some(c) if i >= half && (i - half) % p.stride == 0 => {
                    let j = (i - half) / p.stride;
                    if j < c.len() {
                        c.values()[j].to_string()
                    } else {
                        String::new()
                    }
                }
                _ => String::new(),
            };
            out.push_str(&format!(
                "{id},{},{values},{},{pred_cell},{}\n",
                seg.timestamp(i),
                labels.labels()[i],
                event_cells[i]
            ));
        }
    }
    Ok(out)
}

fn cmd_export_plot(
    st: &Settings,
    sensor: &Option<PathBuf>,
    charges: &Option<PathBuf>,
    model: &Option<PathBuf>,
    plot_out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let series = load_sensor(&st.sensor_path(sensor))?;
    let log = load_charges(&st.charges_path(charges))?;
    let (model, stats) = load_model_file(&st.model_path(model))?;
    let segments = segments_of(&series, &st.params)?;
    let plot = build_plot_csv(&model, &stats, &segments, &log, &st.params)?;
    let plot_path = st.path_or_default(plot_out, "plot.csv");
    let rows = plot.lines().count().saturating_sub(1);
    write_output(&plot_path, plot.as_bytes())?;
    println!("wrote plot with {rows} rows to {}", plot_path.display());
    Ok(())
}
