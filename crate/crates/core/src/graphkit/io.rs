//! Plain-text graph format.
//!
//! ```text
//! N d E num_classes
//! <N lines of d space-separated features>
//! <E lines "src dst">
//! <N lines, one label each>
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces features bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{GraphData, GraphError, Result};
use crate::numcore::Tensor;

pub fn write_graph<W: Write>(g: &GraphData, mut w: W) -> Result<()> {
    let (n, d) = (g.num_nodes(), g.num_features());
    writeln!(w, "{n} {d} {} {}", g.num_edges(), g.num_classes)?;
    let mut line = String::new();
    for r in 0..n {
        line.clear();
        for (c, v) in g.x.row(r).iter().enumerate() {
            if c > 0 {
                line.push(' ');
            }
            write!(line, "{v:?}").expect("writing to a String cannot fail");
        }
        writeln!(w, "{line}")?;
    }
    for &(s, t) in &g.edge_index {
        writeln!(w, "{s} {t}")?;
    }
    for &l in &g.y {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_err(line: usize, msg: impl std::fmt::Display) -> GraphError {
    GraphError::Format(format!("line {line}: {msg}"))
}

fn parse_all<T: std::str::FromStr>(line_no: usize, text: &str, want: usize) -> Result<Vec<T>> {
    let vals = text
        .split_whitespace()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| fmt_err(line_no, format!("cannot parse {t:?}")))
        })
        .collect::<Result<Vec<T>>>()?;
    if vals.len() != want {
        return Err(fmt_err(
            line_no,
            format!("expected {want} fields, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

pub fn read_graph<R: BufRead>(r: R) -> Result<GraphData> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(GraphError::Format(format!("unexpected end of file, expected {what}"))),
        }
    };
    let (i, header) = next("header")?;
    let h: Vec<usize> = parse_all(i, &header, 4)?;
    let (n, d, e, classes) = (h[0], h[1], h[2], h[3]);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let (i, l) = next("feature row")?;
        data.extend(parse_all::<f64>(i, &l, d)?);
    }
    let mut edges = Vec::with_capacity(e);
    for _ in 0..e {
        let (i, l) = next("edge")?;
        let p: Vec<usize> = parse_all(i, &l, 2)?;
        edges.push((p[0], p[1]));
    }
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, l) = next("label")?;
        y.push(parse_all::<usize>(i, &l, 1)?[0]);
    }
    GraphData::new(Tensor::new(vec![n, d], data)?, edges, y, classes)
}
