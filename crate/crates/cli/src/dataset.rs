//! Landmark CSV files.
//!
//! ```text
//! # comment lines start with '#'
//! 6,2
//! specimen-1,small,x11,x12,x21,x22,...
//! ```
//!
//! The first data line holds `N,K`; every following line is one specimen:
//! an id, a group label and N·K coordinates in row-major order.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use qrshape::geometry::LandmarkConfiguration;

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub group: String,
    pub config: LandmarkConfiguration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub landmarks: usize,
    pub dims: usize,
    pub records: Vec<Record>,
}

fn parse_error(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

impl Dataset {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut lines = data_lines(text);
        let (hline, header) = lines
            .next()
            .ok_or_else(|| parse_error(1, "empty file: expected an `N,K` header"))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|f| f.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_error(hline, format!("header must be `N,K`, got '{header}'")))?;
        let [landmarks, k] = dims[..] else {
            return Err(parse_error(hline, format!("header must be `N,K`, got '{header}'")));
        };
        if landmarks < 2 || k < 1 {
            return Err(parse_error(hline, "need N >= 2 landmarks and K >= 1 dimensions"));
        }
        let mut records = Vec::new();
        for (line, text) in lines {
            let fields: Vec<&str> = text.split(',').map(str::trim).collect();
            if fields.len() != 2 + landmarks * k {
                return Err(parse_error(
                    line,
                    format!(
                        "expected id, group and {} coordinates, found {} fields",
                        landmarks * k,
                        fields.len()
                    ),
                ));
            }
            let mut values = Vec::with_capacity(landmarks * k);
            for (j, f) in fields[2..].iter().enumerate() {
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_error(line, format!("coordinate {} is not a number: '{f}'", j + 1)))?;
                if !v.is_finite() {
                    return Err(parse_error(line, format!("coordinate {} is not finite", j + 1)));
                }
                values.push(v);
            }
            if fields[1].is_empty() {
                return Err(parse_error(line, "group label is empty"));
            }
            let config = LandmarkConfiguration::from_row_slice(landmarks, k, &values)
                .map_err(|e| parse_error(line, e.to_string()))?;
            records.push(Record {
                id: fields[0].to_string(),
                group: fields[1].to_string(),
                config,
            });
        }
        if records.is_empty() {
            return Err(parse_error(hline, "no specimens after the header"));
        }
        Ok(Dataset {
            landmarks,
            dims: k,
            records,
        })
    }

    /// Group labels in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.group) {
                out.push(r.group.clone());
            }
        }
        out
    }

    pub fn configurations(&self, group: Option<&str>) -> Vec<LandmarkConfiguration> {
        self.records
            .iter()
            .filter(|r| group.is_none_or(|g| r.group == g))
            .map(|r| r.config.clone())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.landmarks, self.dims);
        for r in &self.records {
            let _ = write!(out, "{},{}", r.id, r.group);
            let data = r.config.data();
            for i in 0..self.landmarks {
                for j in 0..self.dims {
                    let _ = write!(out, ",{}", data[(i, j)]);
                }
            }
            out.push('\n');
        }
        out
    }
}

/// K×K matrix from a CSV of K rows.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, ParseError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, l) in data_lines(text) {
        let row = l
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| parse_error(line, format!("not a numeric row: '{l}'")))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(line, "rows differ in length"));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows[0].len() != n {
        return Err(parse_error(1, "expected a square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "# two triangles\n3,2\na,g1,0,0,1,0,0,1\n\nb,g2,0,0,2,0,0,1.5\n";

    #[test]
    fn parses_and_round_trips() {
        let d = Dataset::parse(SMALL).unwrap();
        assert_eq!((d.landmarks, d.dims, d.records.len()), (3, 2, 2));
        assert_eq!(d.groups(), vec!["g1", "g2"]);
        assert_eq!(d.records[1].config.data()[(1, 0)], 2.0);
        assert_eq!(Dataset::parse(&d.to_csv()).unwrap(), d);
        assert_eq!(d.configurations(Some("g2")).len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Dataset::parse("3,2\na,g,0,0,1,0,0\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = Dataset::parse("# c\n3,2\na,g,0,0,1,0,0,1\nb,g,0,0,x,0,0,1\n").unwrap_err();
        assert_eq!(e.line, 4);
        assert!(e.message.contains("coordinate 3"));
        assert_eq!(Dataset::parse("3;2\n").unwrap_err().line, 1);
        assert!(Dataset::parse("").is_err());
    }

    #[test]
    fn matrix_files() {
        let m = parse_matrix("2,0.5\n0.5,1\n").unwrap();
        assert_eq!(m[(0, 1)], 0.5);
        assert!(parse_matrix("1,2\n3\n").is_err());
    }
}
