//! Seed-cluster text format.
//!
//! ```text
//! # comment
//! cluster <name>
//! role <label> <activity_min> <activity_max> <amount_min> <amount_max>
//! edge <from>,<to>,<amount>,<rel_time>
//! end
//! ```
//!
//! Roles must be declared before the edges that use them. Activity is in
//! events per day, amounts in currency units (at most two decimals), times in
//! seconds relative to the cluster anchor. `inf` is accepted as an upper bound.

use std::collections::HashMap;
use std::io::{self, Write};

use thiserror::Error;

use super::{check_sanity, ClusterEdge, IllicitCluster, Range, RoleId, RoleNode};

#[derive(Debug, Error)]
#[error("seed file line {line}: {message}")]
pub struct SeedParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> SeedParseError {
    SeedParseError {
        line,
        message: message.into(),
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64, SeedParseError> {
    let v: f64 = s
        .parse()
        .map_err(|_| err(line, format!("not a number: {s:?}")))?;
    if v.is_nan() || v < 0.0 {
        return Err(err(
            line,
            format!("expected a non-negative number, got {s:?}"),
        ));
    }
    Ok(v)
}

fn parse_cents(s: &str, line: usize) -> Result<i64, SeedParseError> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    let bad = || err(line, format!("bad amount {s:?}"));
    if whole.is_empty()
        || frac.len() > 2
        || !whole.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(bad());
    }
    let units: i64 = whole.parse().map_err(|_| bad())?;
    let cents: i64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<2}").parse().map_err(|_| bad())?
    };
    units
        .checked_mul(100)
        .and_then(|u| u.checked_add(cents))
        .ok_or_else(bad)
}

struct Partial {
    name: String,
    start: usize,
    nodes: Vec<RoleNode>,
    edges: Vec<ClusterEdge>,
    ids: HashMap<String, RoleId>,
}

/// Parses every cluster in `text`. Each cluster must pass the sanity check.
pub fn parse_seed_file(text: &str) -> Result<Vec<IllicitCluster>, SeedParseError> {
    let mut out = Vec::new();
    let mut cur: Option<Partial> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (kw, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
        let rest = rest.trim();
        match kw {
            "cluster" => {
                if cur.is_some() {
                    return Err(err(
                        line,
                        "cluster opened before the previous one was closed",
                    ));
                }
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(err(line, "cluster needs a single-word name"));
                }
                cur = Some(Partial {
                    name: rest.to_string(),
                    start: line,
                    nodes: vec![],
                    edges: vec![],
                    ids: HashMap::new(),
                });
            }
            "role" => {
                let c = cur
                    .as_mut()
                    .ok_or_else(|| err(line, "role outside a cluster"))?;
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 5 {
                    return Err(err(
                        line,
                        "role needs: label act_min act_max amt_min amt_max",
                    ));
                }
                if !c.edges.is_empty() {
                    return Err(err(line, "roles must precede edges"));
                }
                let v: Vec<f64> = f[1..]
                    .iter()
                    .map(|s| parse_f64(s, line))
                    .collect::<Result<_, _>>()?;
                if v[0] > v[1] || v[2] > v[3] {
                    return Err(err(line, "range lower bound exceeds upper bound"));
                }
                let id = RoleId(c.nodes.len() as u32);
                if c.ids.insert(f[0].to_string(), id).is_some() {
                    return Err(err(line, format!("duplicate role {:?}", f[0])));
                }
                c.nodes.push(RoleNode {
                    id,
                    label: f[0].to_string(),
                    activity_range: Range::new(v[0], v[1]),
                    amount_range: Range::new(v[2], v[3]),
                });
            }
            "edge" => {
                let c = cur
                    .as_mut()
                    .ok_or_else(|| err(line, "edge outside a cluster"))?;
                let f: Vec<&str> = rest.split(',').map(str::trim).collect();
                if f.len() != 4 {
                    return Err(err(line, "edge needs: from,to,amount,rel_time"));
                }
                let role = |name: &str| {
                    c.ids
                        .get(name)
                        .copied()
                        .ok_or_else(|| err(line, format!("undeclared role {name:?}")))
                };
                let (from, to) = (role(f[0])?, role(f[1])?);
                let amount_cents = parse_cents(f[2], line)?;
                let rel_time: i64 = f[3]
                    .parse()
                    .map_err(|_| err(line, format!("bad rel_time {:?}", f[3])))?;
                c.edges.push(ClusterEdge {
                    from,
                    to,
                    amount_cents,
                    rel_time,
                });
            }
            "end" => {
                let c = cur.take().ok_or_else(|| err(line, "end without cluster"))?;
                let cluster = IllicitCluster::new(c.name, c.nodes, c.edges);
                let v = check_sanity(&cluster);
                if !v.is_empty() {
                    return Err(err(
                        c.start,
                        format!("cluster {:?} is not sane: {v:?}", cluster.name),
                    ));
                }
                out.push(cluster);
            }
            other => return Err(err(line, format!("unknown record {other:?}"))),
        }
    }
    if let Some(c) = cur {
        return Err(err(c.start, format!("cluster {:?} is missing end", c.name)));
    }
    Ok(out)
}

fn fmt_bound(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x}")
    }
}

/// Writes clusters in the format read by [`parse_seed_file`].
pub fn write_seed_file<W: Write>(clusters: &[IllicitCluster], mut w: W) -> io::Result<()> {
    for c in clusters {
        writeln!(w, "cluster {}", c.name)?;
        for n in &c.nodes {
            writeln!(
                w,
                "role {} {} {} {} {}",
                n.label,
                fmt_bound(n.activity_range.lo),
                fmt_bound(n.activity_range.hi),
                fmt_bound(n.amount_range.lo),
                fmt_bound(n.amount_range.hi)
            )?;
        }
        let label = |id: RoleId| c.node(id).map(|n| n.label.as_str()).unwrap_or("?");
        for e in &c.edges {
            let sign = if e.amount_cents < 0 { "-" } else { "" };
            let a = e.amount_cents.unsigned_abs();
            writeln!(
                w,
                "edge {},{},{sign}{}.{:02},{}",
                label(e.from),
                label(e.to),
                a / 100,
                a % 100,
                e.rel_time
            )?;
        }
        writeln!(w, "end")?;
    }
    Ok(())
}

const BUILTIN: &str = "\
# Layering chain: placement, two mules, integration.
cluster chain
role src 0.01 2 40 2000
role mule1 0.01 1 10 400
role mule2 0.01 1 10 400
role sink 0.01 2 20 1000
edge src,mule1,9500.00,0
edge mule1,mule2,9400.00,5400
edge mule2,sink,9300.00,14400
end

# One account distributes below a reporting threshold.
cluster fan_out
role src 0.01 2 40 2000
role r1 0.01 1 10 400
role r2 0.01 1 10 400
role r3 0.01 1 10 400
role r4 0.01 1 10 400
edge src,r1,4800.00,0
edge src,r2,4750.00,1800
edge src,r3,4900.00,3600
edge src,r4,4650.00,7200
end

# Several deposits consolidated into one collector.
cluster fan_in
role d1 0.01 1 10 400
role d2 0.01 1 10 400
role d3 0.01 1 10 400
role d4 0.01 1 10 400
role collector 0.01 2 40 2000
edge d1,collector,3000.00,0
edge d2,collector,2900.00,2700
edge d3,collector,3100.00,6300
edge d4,collector,2950.00,9000
end

# Scatter through mules then gather.
cluster scatter_gather
role src 0.01 2 40 2000
role m1 0.01 1 10 400
role m2 0.01 1 10 400
role m3 0.01 1 10 400
role sink 0.01 2 20 1000
edge src,m1,3000.00,0
edge src,m2,3000.00,600
edge src,m3,3000.00,1200
edge m1,sink,2950.00,7200
edge m2,sink,2950.00,9000
edge m3,sink,2950.00,10800
end

# Funds injected from outside circulate back to the first account.
cluster cycle
role ext 0.01 2 40 2000
role a 0.01 1 10 400
role b 0.01 1 10 400
role c 0.01 1 10 400
edge ext,a,8000.00,0
edge a,b,7900.00,3600
edge b,c,7800.00,10800
edge c,a,7700.00,21600
end
";

/// Small fund-flow templates shipped with the library.
pub fn builtin_seeds() -> Vec<IllicitCluster> {
    parse_seed_file(BUILTIN).expect("built-in seeds parse")
}
