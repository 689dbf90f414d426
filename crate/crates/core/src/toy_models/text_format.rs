//! Plain-text matrix format shared by Markov models and weight matrices.
//!
//! ```text
//! wmlab-matrix 1
//! kind markov            # or: kind weights
//! vocab 3                # markov only
//! order 1                # markov only
//! length 4               # markov only
//! initial 0.33333333333333331 0.33333333333333331 0.33333333333333331
//! rows 3                 # weights only
//! cols 3                 # weights only
//! row 0.50000000000000000 0.50000000000000000 0.00000000000000000
//! row -                  # markov only: absent row
//! ```
//!
//! Values are written with 17 fixed decimals. `#` starts a comment. Markov rows
//! and the initial vector are renormalized on load when they sum to 1 within
//! 1e-9; a larger deviation is an error.

use crate::error::{Error, Result};
use crate::types::Vocabulary;

use super::MarkovModel;

const MAGIC: &str = "wmlab-matrix 1";
const LOAD_TOLERANCE: f64 = 1e-9;

fn fmt_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.17}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_model(model: &MarkovModel) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str("kind markov\n");
    out.push_str(&format!("vocab {}\n", model.vocab().size()));
    out.push_str(&format!("order {}\n", model.order()));
    out.push_str(&format!("length {}\n", model.length()));
    out.push_str(&format!("initial {}\n", fmt_row(model.initial())));
    for row in model.rows() {
        match row {
            Some(r) => out.push_str(&format!("row {}\n", fmt_row(r))),
            None => out.push_str("row -\n"),
        }
    }
    out
}

/// A dense nonnegative matrix read from or written to the text format.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn write_weights(m: &WeightMatrix) -> String {
    let mut out = format!("{MAGIC}\nkind weights\nrows {}\ncols {}\n", m.rows, m.cols);
    for r in 0..m.rows {
        out.push_str(&format!(
            "row {}\n",
            fmt_row(&m.data[r * m.cols..(r + 1) * m.cols])
        ));
    }
    out
}

struct Lines<'a> {
    inner: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let inner = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Lines { inner, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let line = self
            .inner
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::Parse {
                line: self.inner.last().map_or(0, |l| l.0),
                message: format!("unexpected end of input, expected {what}"),
            })?;
        self.pos += 1;
        Ok(line)
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (line, text) = self.next(key)?;
        match text.split_once(char::is_whitespace) {
            Some((k, rest)) if k == key => Ok((line, rest.trim())),
            None if text == key => Ok((line, "")),
            _ => Err(Error::Parse {
                line,
                message: format!("expected `{key}`, found `{text}`"),
            }),
        }
    }

    fn usize_field(&mut self, key: &str) -> Result<usize> {
        let (line, v) = self.field(key)?;
        v.parse().map_err(|_| Error::Parse {
            line,
            message: format!("`{key}` needs a nonnegative integer, found `{v}`"),
        })
    }

    fn done(&self) -> Result<()> {
        match self.inner.get(self.pos) {
            Some((line, text)) => Err(Error::Parse {
                line: *line,
                message: format!("trailing content `{text}`"),
            }),
            None => Ok(()),
        }
    }
}

fn parse_values(line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|s| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("bad number `{s}`"),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Parse {
            line,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

fn renormalize(line: usize, mut values: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > LOAD_TOLERANCE || values.iter().any(|v| *v < 0.0) {
        return Err(Error::Parse {
            line,
            message: format!("probabilities must be nonnegative and sum to 1 (sum {total})"),
        });
    }
    for v in values.iter_mut() {
        *v /= total;
    }
    Ok(values)
}

fn header<'a>(lines: &mut Lines<'a>, kind: &str) -> Result<()> {
    let (line, magic) = lines.next("header")?;
    if magic != MAGIC {
        return Err(Error::Parse {
            line,
            message: format!("expected `{MAGIC}`"),
        });
    }
    let (line, k) = lines.field("kind")?;
    if k != kind {
        return Err(Error::Parse {
            line,
            message: format!("expected kind `{kind}`, found `{k}`"),
        });
    }
    Ok(())
}

pub fn read_model(text: &str) -> Result<MarkovModel> {
    let mut lines = Lines::new(text);
    header(&mut lines, "markov")?;
    let vocab_size = lines.usize_field("vocab")?;
    let order = lines.usize_field("order")?;
    let length = lines.usize_field("length")?;
    let vocab = Vocabulary::new(vocab_size)?;
    let contexts = vocab_size
        .checked_pow(order as u32)
        .filter(|&c| c <= 1 << 24)
        .ok_or_else(|| Error::MalformedModel("too many contexts".into()))?;
    let (line, init) = lines.field("initial")?;
    let initial = renormalize(line, parse_values(line, init, contexts)?)?;
    let mut rows = Vec::with_capacity(contexts);
    for _ in 0..contexts {
        let (line, r) = lines.field("row")?;
        if r == "-" {
            rows.push(None);
        } else {
            rows.push(Some(renormalize(line, parse_values(line, r, vocab_size)?)?));
        }
    }
    lines.done()?;
    MarkovModel::new(vocab, order, length, initial, rows)
}

pub fn read_weights(text: &str) -> Result<WeightMatrix> {
    let mut lines = Lines::new(text);
    header(&mut lines, "weights")?;
    let rows = lines.usize_field("rows")?;
    let cols = lines.usize_field("cols")?;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (line, r) = lines.field("row")?;
        let values = parse_values(line, r, cols)?;
        if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Parse {
                line,
                message: "weights must be finite and nonnegative".into(),
            });
        }
        data.extend(values);
    }
    lines.done()?;
    Ok(WeightMatrix { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn model_round_trip_and_format() {
        let m = MarkovModel::uniform(3, 1, 4).unwrap();
        let text = write_model(&m);
        assert!(text.starts_with("wmlab-matrix 1\nkind markov\nvocab 3\norder 1\nlength 4\n"));
        assert!(text.contains("row 0.33333333333333331 0.33333333333333331 0.33333333333333331"));
        let back = read_model(&text).unwrap();
        assert_eq!(back.vocab(), m.vocab());
        for (a, b) in back.rows().iter().zip(m.rows()) {
            for (x, y) in a.as_ref().unwrap().iter().zip(b.as_ref().unwrap()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn absent_rows_and_comments() {
        let text = "# a chain\nwmlab-matrix 1\nkind markov\nvocab 2\norder 1\nlength 3\n\
                    initial 1 0\nrow 1 0   # self loop\nrow -\n";
        let m = read_model(text).unwrap();
        assert!(m.rows()[1].is_none());
        assert!(write_model(&m).contains("row -"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "wmlab-matrix 1\nkind markov\nvocab 2\norder 1\nlength 3\ninitial 0.5 0.5\nrow 0.9 0.3\nrow 0.5 0.5\n";
        match read_model(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_model("wmlab-matrix 1\nkind weights\n").is_err());
    }

    proptest! {
        #[test]
        fn random_models_round_trip(seed in 0u64..1000, v in 2usize..7, sharp in 0.5f64..4.0) {
            let m = MarkovModel::random_order_one(v, 5, sharp, &mut RngStream::new(seed, "rt")).unwrap();
            let back = read_model(&write_model(&m)).unwrap();
            for (a, b) in back.rows().iter().zip(m.rows()) {
                for (x, y) in a.as_ref().unwrap().iter().zip(b.as_ref().unwrap()) {
                    prop_assert!((x - y).abs() < 1e-15);
                }
            }
        }

        #[test]
        fn weights_round_trip(data in proptest::collection::vec(0.0f64..10.0, 12)) {
            let m = WeightMatrix { rows: 3, cols: 4, data };
            let back = read_weights(&write_weights(&m)).unwrap();
            for (x, y) in back.data.iter().zip(&m.data) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }
    }
}
