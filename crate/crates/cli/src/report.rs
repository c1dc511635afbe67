//! CSV emitters and the storage layer-table reader.
//!
//! Every writer emits a header row, `,` separators and `.` decimals.
//! Floats use Rust's shortest round-trip formatting, so identical inputs
//! give byte-identical files.

use std::io::{Read, Write};

use truncquant_core::qat::TrainLogRow;
use truncquant_core::storage::{LayerEntry, LayerPosition, StorageLine};
use truncquant_core::QtReport;

pub const QT_HEADER: [&str; 10] = [
    "layer",
    "n",
    "b",
    "total_weights",
    "gap_count",
    "level_size",
    "e_q",
    "e_t_direct",
    "e_t_factored",
    "norm_kind",
];

pub fn write_qt_reports<W: Write>(out: W, reports: &[QtReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(QT_HEADER)?;
    for r in reports {
        w.write_record([
            r.layer.clone(),
            r.n.to_string(),
            r.b.to_string(),
            r.total_weights.to_string(),
            r.gap_count.to_string(),
            r.level_size.to_string(),
            r.e_q.to_string(),
            r.e_t_direct.to_string(),
            r.e_t_factored.map(|v| v.to_string()).unwrap_or_default(),
            r.norm_kind.as_str().to_owned(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_train_log<W: Write>(out: W, rows: &[TrainLogRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "n_sampled", "loss", "train_acc"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.n_sampled.to_string(),
            r.loss.to_string(),
            r.train_acc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_storage<W: Write>(out: W, lines: &[StorageLine]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "bytes", "ratio_to_truncquant"])?;
    for l in lines {
        w.write_record([
            l.strategy.as_str().to_owned(),
            l.bytes.to_string(),
            l.ratio_to_truncquant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions<W: Write>(
    out: W,
    predictions: &[usize],
    labels: &[usize],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "label", "prediction"])?;
    for (i, (p, l)) in predictions.iter().zip(labels).enumerate() {
        w.write_record([i.to_string(), l.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum LayerTableError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: String },
}

/// Reads a `name,param_count,position` table; `position` is one of
/// `first`, `hidden` or `last`.
pub fn read_layer_table<R: Read>(input: R) -> Result<Vec<LayerEntry>, LayerTableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["name", "param_count", "position"] {
        return Err(LayerTableError::Row {
            line: 1,
            reason: "expected header name,param_count,position".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| LayerTableError::Row { line, reason };
        let param_count = rec[1]
            .parse::<u64>()
            .map_err(|e| bad(format!("param_count {:?}: {e}", &rec[1])))?;
        let position = match &rec[2] {
            "first" => LayerPosition::First,
            "hidden" => LayerPosition::Hidden,
            "last" => LayerPosition::Last,
            other => return Err(bad(format!("unknown position {other:?}"))),
        };
        out.push(LayerEntry {
            name: rec[0].to_owned(),
            param_count,
            position,
        });
    }
    Ok(out)
}
