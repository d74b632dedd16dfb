//! Plain-text topology files.
//!
//! ```text
//! 3 2
//! 1 2
//! 3 1
//! ```
//!
//! The first line holds `K` and the number of links, then one directed
//! interfering pair `i j` per line, 1-indexed. Blank lines and lines starting
//! with `#` are ignored on input. Output lists links in ascending order, so
//! writing a parsed file reproduces a canonical file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::objectives::NetworkTopology;

fn parse_usize(tok: Option<&str>, line: usize, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} {tok:?} is not a non-negative integer"),
    })
}

pub fn parse_topology(text: &str) -> Result<NetworkTopology> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty topology file".into(),
    })?;
    let mut toks = header.split_whitespace();
    let k = parse_usize(toks.next(), hline, "user count")?;
    let count = parse_usize(toks.next(), hline, "link count")?;
    if toks.next().is_some() {
        return Err(Error::Parse {
            line: hline,
            msg: "header must be `K link_count`".into(),
        });
    }
    if k == 0 {
        return Err(Error::Parse {
            line: hline,
            msg: "K must be positive".into(),
        });
    }

    let mut links = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    for (ln, l) in lines {
        let mut toks = l.split_whitespace();
        let i = parse_usize(toks.next(), ln, "source user")?;
        let j = parse_usize(toks.next(), ln, "target user")?;
        if toks.next().is_some() {
            return Err(Error::Parse {
                line: ln,
                msg: "expected exactly two indices".into(),
            });
        }
        if i == 0 || j == 0 || i > k || j > k {
            return Err(Error::Parse {
                line: ln,
                msg: format!("pair ({i}, {j}) outside 1..={k}"),
            });
        }
        if i == j {
            return Err(Error::Parse {
                line: ln,
                msg: format!("self link ({i}, {i})"),
            });
        }
        if !seen.insert((i, j)) {
            return Err(Error::Parse {
                line: ln,
                msg: format!("duplicate link ({i}, {j})"),
            });
        }
        links.push((i - 1, j - 1));
    }
    if links.len() != count {
        return Err(Error::Parse {
            line: hline,
            msg: format!("header declares {count} links, found {}", links.len()),
        });
    }
    NetworkTopology::new(k, links)
}

pub fn format_topology(topo: &NetworkTopology) -> String {
    let mut out = format!("{} {}\n", topo.k(), topo.num_links());
    for &(i, j) in topo.links() {
        writeln!(out, "{} {}", i + 1, j + 1).expect("writing to a String");
    }
    out
}

pub fn read_topology(path: impl AsRef<Path>) -> Result<NetworkTopology> {
    parse_topology(&std::fs::read_to_string(path)?)
}

pub fn write_topology(path: impl AsRef<Path>, topo: &NetworkTopology) -> Result<()> {
    std::fs::write(path, format_topology(topo))?;
    Ok(())
}
