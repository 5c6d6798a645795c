//! Line-oriented text formats for utterances, embeddings, trials and
//! scores. All files are UTF-8, accept both LF and CRLF endings, ignore
//! `#`-prefixed comment lines, and store floats with 9 significant digits.

use super::{Trial, TrialSet, Utterance};
use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

/// 9 significant digits, enough to reproduce the written value exactly on
/// re-read + re-write.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn parse_float(s: &str, path: &Path, line: usize, offset: u64) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        byte_offset: offset,
        message: format!("'{s}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line,
            byte_offset: offset,
            message: format!("non-finite value '{s}'"),
        });
    }
    Ok(v)
}

/// Iterates non-comment, non-empty lines with their 1-based line number and
/// the byte offset of the line start. Strips a trailing `\r` so CRLF files
/// parse identically to LF files.
fn content_lines(path: &Path) -> Result<Vec<(usize, u64, String)>> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut reader = std::io::BufReader::new(file);
    let mut lines = Vec::new();
    let mut offset = 0u64;
    let mut lineno = 0usize;
    loop {
        let mut raw = String::new();
        let n = reader.read_line(&mut raw).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            byte_offset: offset,
            message: format!("not valid UTF-8: {e}"),
        })?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let start = offset;
        offset += n as u64;
        let trimmed = raw.trim_end_matches(['\n', '\r']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines.push((lineno, start, trimmed.to_string()));
    }
    Ok(lines)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(file))
}

/// `utt_id<TAB>speaker_id<TAB>v1 v2 ...` per line.
pub fn write_utterances(path: &Path, utterances: &[Utterance]) -> Result<()> {
    let mut out = create(path)?;
    for u in utterances {
        let feats: Vec<String> = u.features.iter().map(|v| fmt_float(*v)).collect();
        writeln!(out, "{}\t{}\t{}", u.utt_id, u.speaker_id, feats.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_utterances(path: &Path) -> Result<Vec<Utterance>> {
    let mut utterances = Vec::new();
    let mut dim: Option<usize> = None;
    let mut ids = std::collections::HashSet::new();
    for (line, offset, text) in content_lines(path)? {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                byte_offset: offset,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let features: Vec<f64> = fields[2]
            .split_whitespace()
            .map(|s| parse_float(s, path, line, offset))
            .collect::<Result<_>>()?;
        if features.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                byte_offset: offset,
                message: "empty feature vector".into(),
            });
        }
        if let Some(d) = dim {
            if features.len() != d {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    byte_offset: offset,
                    message: format!("feature dimension {} != {d}", features.len()),
                });
            }
        } else {
            dim = Some(features.len());
        }
        if !ids.insert(fields[0].to_string()) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                byte_offset: offset,
                message: format!("duplicate utt_id '{}'", fields[0]),
            });
        }
        utterances.push(Utterance {
            utt_id: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            features,
        });
    }
    Ok(utterances)
}

/// `utt_id<TAB>v1 v2 ...` per line.
pub fn write_embeddings(path: &Path, embeddings: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = create(path)?;
    for (id, e) in embeddings {
        let vals: Vec<String> = e.iter().map(|v| fmt_float(*v)).collect();
        writeln!(out, "{}\t{}", id, vals.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut embeddings = Vec::new();
    let mut dim: Option<usize> = None;
    for (line, offset, text) in content_lines(path)? {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                byte_offset: offset,
                message: format!("expected 2 tab-separated fields, got {}", fields.len()),
            });
        }
        let values: Vec<f64> = fields[1]
            .split_whitespace()
            .map(|s| parse_float(s, path, line, offset))
            .collect::<Result<_>>()?;
        if let Some(d) = dim {
            if values.len() != d {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    byte_offset: offset,
                    message: format!("embedding dimension {} != {d}", values.len()),
                });
            }
        } else {
            dim = Some(values.len());
        }
        embeddings.push((fields[0].to_string(), values));
    }
    Ok(embeddings)
}

/// `enroll_utt_id test_utt_id {0|1}` whitespace-separated, one per line.
pub fn write_trials(path: &Path, trials: &TrialSet) -> Result<()> {
    let mut out = create(path)?;
    for t in trials {
        writeln!(out, "{} {} {}", t.enroll, t.test, t.target as u8)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<TrialSet> {
    let mut trials = Vec::new();
    for (line, offset, text) in content_lines(path)? {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                byte_offset: offset,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let target = match fields[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    byte_offset: offset,
                    message: format!("label '{other}' must be 0 or 1"),
                })
            }
        };
        trials.push(Trial {
            enroll: fields[0].to_string(),
            test: fields[1].to_string(),
            target,
        });
    }
    Ok(trials)
}

/// `enroll_utt_id test_utt_id score` per line.
pub fn write_scores(path: &Path, scores: &[(String, String, f64)]) -> Result<()> {
    let mut out = create(path)?;
    for (e, t, s) in scores {
        writeln!(out, "{e} {t} {}", fmt_float(*s))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let mut scores = Vec::new();
    for (line, offset, text) in content_lines(path)? {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                byte_offset: offset,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let score = parse_float(fields[2], path, line, offset)?;
        scores.push((fields[0].to_string(), fields[1].to_string(), score));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_universe, UniverseConfig};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn utterances_round_trip() {
        let cfg = UniverseConfig {
            k_train: 3,
            k_unseen: 2,
            d_feat: 5,
            kappa: 4.0,
            utts_per_speaker: 2,
        };
        let u = gen_universe(&cfg, 1).unwrap();
        let dir = tmp();
        let path = dir.path().join("utts.tsv");
        write_utterances(&path, &u.train_utterances).unwrap();
        let back = read_utterances(&path).unwrap();
        assert_eq!(back.len(), u.train_utterances.len());
        for (a, b) in back.iter().zip(&u.train_utterances) {
            assert_eq!(a.utt_id, b.utt_id);
            assert_eq!(a.speaker_id, b.speaker_id);
            for (x, y) in a.features.iter().zip(&b.features) {
                assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0));
            }
        }
        // Write-read-write is byte stable.
        let path2 = dir.path().join("utts2.tsv");
        write_utterances(&path2, &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn malformed_line_names_line_and_offset() {
        let dir = tmp();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "# header\nu1\ts1\t0.5 0.5\nu2\ts2\n").unwrap();
        let err = read_utterances(&path).unwrap_err();
        match err {
            Error::Parse {
                line, byte_offset, ..
            } => {
                assert_eq!(line, 3);
                assert_eq!(byte_offset as usize, "# header\nu1\ts1\t0.5 0.5\n".len());
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn crlf_and_lf_parse_identically() {
        let dir = tmp();
        let lf = dir.path().join("lf.txt");
        let crlf = dir.path().join("crlf.txt");
        std::fs::write(&lf, "a b 1\n# comment\nc d 0\n").unwrap();
        std::fs::write(&crlf, "a b 1\r\n# comment\r\nc d 0\r\n").unwrap();
        assert_eq!(read_trials(&lf).unwrap(), read_trials(&crlf).unwrap());
    }

    #[test]
    fn trial_labels_validated() {
        let dir = tmp();
        let path = dir.path().join("t.txt");
        std::fs::write(&path, "a b 2\n").unwrap();
        assert!(read_trials(&path).is_err());
    }

    #[test]
    fn scores_round_trip_and_embeddings_dim_checked() {
        let dir = tmp();
        let s = dir.path().join("s.txt");
        let rows = vec![
            ("e1".to_string(), "t1".to_string(), 0.123456789),
            ("e2".to_string(), "t2".to_string(), -0.998),
        ];
        write_scores(&s, &rows).unwrap();
        let back = read_scores(&s).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[0].2 - 0.123456789).abs() < 1e-9);

        let e = dir.path().join("e.tsv");
        std::fs::write(&e, "u1\t0.1 0.2\nu2\t0.3\n").unwrap();
        assert!(read_embeddings(&e).is_err());
    }

    #[test]
    fn duplicate_utt_ids_rejected() {
        let dir = tmp();
        let path = dir.path().join("dup.tsv");
        std::fs::write(&path, "u1\ts1\t0.5\nu1\ts2\t0.5\n").unwrap();
        assert!(read_utterances(&path).is_err());
    }
}
