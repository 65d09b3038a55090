//! Append-only tab-separated training log. Every interval records loss,
//! pairwise accuracy, and the positive/negative score means needed to
//! redraw score-range traces; validation rows also carry nDCG@10.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub pairwise_acc: f64,
    pub margin_mean_pos: f64,
    pub margin_mean_neg: f64,
    pub val_ndcg10: Option<f64>,
}

pub const LOG_HEADER: &str = "step\tloss\tpairwise_acc\tmargin_mean_pos\tmargin_mean_neg\tval_ndcg10";

/// Collects records in memory and optionally streams them to a file.
pub struct TrainLog {
    writer: Option<BufWriter<fs::File>>,
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn in_memory() -> Self {
        TrainLog {
            writer: None,
            records: Vec::new(),
        }
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let mut writer = BufWriter::new(fs::File::create(path)?);
        writeln!(writer, "{LOG_HEADER}")?;
        Ok(TrainLog {
            writer: Some(writer),
            records: Vec::new(),
        })
    }

    pub fn append(&mut self, record: LogRecord) -> std::io::Result<()> {
        if let Some(w) = &mut self.writer {
            let val = match record.val_ndcg10 {
                Some(v) => format!("{v:.6}"),
                None => "-".to_string(),
            };
            writeln!(
                w,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                record.step,
                record.loss,
                record.pairwise_acc,
                record.margin_mean_pos,
                record.margin_mean_neg,
                val
            )?;
            w.flush()?;
        }
        self.records.push(record);
        Ok(())
    }
}

/// Parse a training-log file back into records.
pub fn read_train_log(path: &Path) -> std::io::Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            continue;
        }
        let parse = |s: &str| s.parse::<f64>().ok();
        if let (Ok(step), Some(loss), Some(acc), Some(mp), Some(mn)) = (
            cols[0].parse::<usize>(),
            parse(cols[1]),
            parse(cols[2]),
            parse(cols[3]),
            parse(cols[4]),
        ) {
            out.push(LogRecord {
                step,
                loss,
                pairwise_acc: acc,
                margin_mean_pos: mp,
                margin_mean_neg: mn,
                val_ndcg10: if cols[5] == "-" { None } else { parse(cols[5]) },
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.log");
        let mut log = TrainLog::to_file(&path).unwrap();
        log.append(LogRecord {
            step: 10,
            loss: 0.5,
            pairwise_acc: 0.75,
            margin_mean_pos: 1.25,
            margin_mean_neg: -0.5,
            val_ndcg10: None,
        })
        .unwrap();
        log.append(LogRecord {
            step: 20,
            loss: 0.25,
            pairwise_acc: 0.875,
            margin_mean_pos: 2.0,
            margin_mean_neg: -1.0,
            val_ndcg10: Some(0.625),
        })
        .unwrap();
        let back = read_train_log(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].val_ndcg10, None);
        assert_eq!(back[1].val_ndcg10, Some(0.625));
        assert_eq!(back[1].margin_mean_pos, 2.0);
    }
}
