//! Line-oriented geometry format.
//!
//! ```text
//! # comment
//! patch 2 2            # degrees in u and v; patches are numbered in order
//! knots_u 0 0 0 1 1 1
//! knots_v 0 0 0 1 1 1
//! alpha 1              # optional, defaults to 1
//! cp 0 0 0 1           # x y z w, u index fastest
//! ...
//! tag 0 west dirichlet # or `tag * neumann` for every remaining side
//! ```

use std::fmt::{self, Write as _};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{match_interfaces, BoundaryKind, BoundaryTags, GeometryError, MultiPatchSurface, NurbsPatch, Side};
use crate::splines::{KnotVector, NurbsBasis2D};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    /// 1-based; 0 when the file could not be read at all.
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub degree: (usize, usize),
    pub knots_u: Vec<f64>,
    pub knots_v: Vec<f64>,
    pub alpha: f64,
    /// `(x, y, z, w)` with the u index fastest.
    pub control_points: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagTarget {
    Side { patch: usize, side: Side },
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagRecord {
    pub target: TagTarget,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeometryFile {
    pub patches: Vec<PatchRecord>,
    pub tags: Vec<TagRecord>,
}

struct PendingPatch {
    line: usize,
    degree: (usize, usize),
    knots_u: Option<(usize, KnotVector)>,
    knots_v: Option<(usize, KnotVector)>,
    alpha: Option<f64>,
    control_points: Vec<[f64; 4]>,
}

impl PendingPatch {
    fn finish(self, end_line: usize) -> Result<PatchRecord, ParseError> {
        let (_, ku) = self
            .knots_u
            .ok_or_else(|| ParseError::new(self.line, "patch has no knots_u record"))?;
        let (_, kv) = self
            .knots_v
            .ok_or_else(|| ParseError::new(self.line, "patch has no knots_v record"))?;
        let expected = ku.num_basis() * kv.num_basis();
        if self.control_points.len() != expected {
            return Err(ParseError::new(
                self.line,
                format!(
                    "patch expects {} x {} = {expected} control points, found {} before line {end_line}",
                    ku.num_basis(),
                    kv.num_basis(),
                    self.control_points.len()
                ),
            ));
        }
        Ok(PatchRecord {
            degree: self.degree,
            knots_u: ku.knots().to_vec(),
            knots_v: kv.knots().to_vec(),
            alpha: self.alpha.unwrap_or(1.0),
            control_points: self.control_points,
        })
    }
}

fn number<T: std::str::FromStr>(line: usize, field: usize, token: &str) -> Result<T, ParseError> {
    token
        .parse()
        .map_err(|_| ParseError::new(line, format!("field {field}: cannot parse `{token}` as a number")))
}

fn finite(line: usize, field: usize, token: &str) -> Result<f64, ParseError> {
    let v: f64 = number(line, field, token)?;
    if !v.is_finite() {
        return Err(ParseError::new(line, format!("field {field}: `{token}` is not finite")));
    }
    Ok(v)
}

fn boundary_kind(line: usize, field: usize, token: &str) -> Result<BoundaryKind, ParseError> {
    match token {
        "dirichlet" => Ok(BoundaryKind::Dirichlet),
        "neumann" => Ok(BoundaryKind::Neumann),
        _ => Err(ParseError::new(
            line,
            format!("field {field}: unknown boundary kind `{token}` (expected dirichlet or neumann)"),
        )),
    }
}

fn arity(line: usize, keyword: &str, fields: &[&str], n: usize) -> Result<(), ParseError> {
    if fields.len() != n {
        return Err(ParseError::new(
            line,
            format!("`{keyword}` takes {n} fields, found {}", fields.len()),
        ));
    }
    Ok(())
}

pub fn parse(text: &str) -> Result<GeometryFile, ParseError> {
    let mut file = GeometryFile::default();
    let mut current: Option<PendingPatch> = None;
    let mut tag_lines = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        let fields: Vec<&str> = tokens.collect();

        if keyword == "patch" {
            arity(line, keyword, &fields, 2)?;
            if let Some(p) = current.take() {
                file.patches.push(p.finish(line)?);
            }
            let pu: usize = number(line, 1, fields[0])?;
            let pv: usize = number(line, 2, fields[1])?;
            if pu == 0 || pv == 0 {
                return Err(ParseError::new(line, "degrees must be at least 1"));
            }
            current = Some(PendingPatch {
                line,
                degree: (pu, pv),
                knots_u: None,
                knots_v: None,
                alpha: None,
                control_points: Vec::new(),
            });
            continue;
        }
        if keyword == "tag" {
            arity(line, keyword, &fields, if fields.first() == Some(&"*") { 2 } else { 3 })?;
            let record = if fields[0] == "*" {
                TagRecord {
                    target: TagTarget::All,
                    kind: boundary_kind(line, 2, fields[1])?,
                }
            } else {
                let patch = number(line, 1, fields[0])?;
                let side = Side::parse(fields[1]).ok_or_else(|| {
                    ParseError::new(line, format!("field 2: unknown side `{}` (expected west, east, south or north)", fields[1]))
                })?;
                TagRecord {
                    target: TagTarget::Side { patch, side },
                    kind: boundary_kind(line, 3, fields[2])?,
                }
            };
            file.tags.push(record);
            tag_lines.push(line);
            continue;
        }

        let Some(p) = current.as_mut() else {
            return Err(ParseError::new(line, format!("`{keyword}` record before any `patch`")));
        };
        match keyword {
            "knots_u" | "knots_v" => {
                let knots = fields
                    .iter()
                    .enumerate()
                    .map(|(i, t)| finite(line, i + 1, t))
                    .collect::<Result<Vec<_>, _>>()?;
                let degree = if keyword == "knots_u" { p.degree.0 } else { p.degree.1 };
                let kv = KnotVector::new(degree, knots).map_err(|e| ParseError::new(line, e.to_string()))?;
                let slot = if keyword == "knots_u" { &mut p.knots_u } else { &mut p.knots_v };
                if let Some((first, _)) = slot {
                    return Err(ParseError::new(line, format!("duplicate `{keyword}` (first given on line {first})")));
                }
                *slot = Some((line, kv));
            }
            "alpha" => {
                arity(line, keyword, &fields, 1)?;
                let a = finite(line, 1, fields[0])?;
                if a <= 0.0 {
                    return Err(ParseError::new(line, format!("field 1: alpha must be positive, got {a}")));
                }
                p.alpha = Some(a);
            }
            "cp" => {
                arity(line, keyword, &fields, 4)?;
                let mut cp = [0.0; 4];
                for (i, slot) in cp.iter_mut().enumerate() {
                    *slot = finite(line, i + 1, fields[i])?;
                }
                if cp[3] <= 0.0 {
                    return Err(ParseError::new(line, format!("field 4: weight must be positive, got {}", cp[3])));
                }
                p.control_points.push(cp);
            }
            _ => return Err(ParseError::new(line, format!("unknown record `{keyword}`"))),
        }
    }
    if let Some(p) = current.take() {
        file.patches.push(p.finish(last_line + 1)?);
    }
    if file.patches.is_empty() {
        return Err(ParseError::new(last_line.max(1), "file defines no patches"));
    }
    for (tag, &line) in file.tags.iter().zip(&tag_lines) {
        if let TagTarget::Side { patch, .. } = tag.target {
            if patch >= file.patches.len() {
                return Err(ParseError::new(
                    line,
                    format!("field 1: patch {patch} does not exist ({} patches defined)", file.patches.len()),
                ));
            }
        }
    }
    Ok(file)
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
}

pub fn read_geometry(path: &Path) -> Result<GeometryFile, ReadError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text).map_err(|source| ReadError::Parse {
        path: path.display().to_string(),
        source,
    })
}

impl GeometryFile {
    pub fn from_surface(surface: &MultiPatchSurface) -> Self {
        use crate::geometry::EdgeKind;
        let patches = surface
            .patches()
            .iter()
            .zip(surface.alpha())
            .map(|(patch, &alpha)| {
                let w = patch.basis().weights();
                PatchRecord {
                    degree: patch.degree(),
                    knots_u: patch.knots(0).knots().to_vec(),
                    knots_v: patch.knots(1).knots().to_vec(),
                    alpha,
                    control_points: patch
                        .control_points()
                        .iter()
                        .zip(w)
                        .map(|(c, &w)| [c.x, c.y, c.z, w])
                        .collect(),
                }
            })
            .collect();
        let tags = surface
            .edges()
            .iter()
            .filter_map(|e| {
                let kind = match e.kind {
                    EdgeKind::Interior => return None,
                    EdgeKind::Dirichlet => BoundaryKind::Dirichlet,
                    EdgeKind::Neumann => BoundaryKind::Neumann,
                };
                Some(TagRecord {
                    target: TagTarget::Side {
                        patch: e.left.patch,
                        side: e.left.side,
                    },
                    kind,
                })
            })
            .collect();
        Self { patches, tags }
    }

    pub fn boundary_tags(&self) -> BoundaryTags {
        let mut tags = BoundaryTags::default();
        for t in &self.tags {
            match t.target {
                TagTarget::All => tags.default = Some(t.kind),
                TagTarget::Side { patch, side } => {
                    tags.set(patch, side, t.kind);
                }
            }
        }
        tags
    }

    /// Build the patches and match their interfaces.
    pub fn to_surface(&self) -> Result<MultiPatchSurface, GeometryError> {
        let mut patches = Vec::with_capacity(self.patches.len());
        for (id, rec) in self.patches.iter().enumerate() {
            let ku = KnotVector::new(rec.degree.0, rec.knots_u.clone())?;
            let kv = KnotVector::new(rec.degree.1, rec.knots_v.clone())?;
            let weights = rec.control_points.iter().map(|c| c[3]).collect();
            let cps = rec.control_points.iter().map(|c| Vector3::new(c[0], c[1], c[2])).collect();
            patches.push(NurbsPatch::new(id, NurbsBasis2D::new(ku, kv, weights)?, cps)?);
        }
        let alpha = self.patches.iter().map(|p| p.alpha).collect();
        match_interfaces(patches, alpha, &self.boundary_tags())
    }
}

fn write_list(out: &mut String, keyword: &str, values: &[f64]) {
    out.push_str(keyword);
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

impl fmt::Display for GeometryFile {
    /// Floats use the shortest representation that parses back exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for (i, p) in self.patches.iter().enumerate() {
            let _ = writeln!(out, "# patch {i}");
            let _ = writeln!(out, "patch {} {}", p.degree.0, p.degree.1);
            write_list(&mut out, "knots_u", &p.knots_u);
            write_list(&mut out, "knots_v", &p.knots_v);
            let _ = writeln!(out, "alpha {:?}", p.alpha);
            for c in &p.control_points {
                write_list(&mut out, "cp", c);
            }
        }
        for t in &self.tags {
            let kind = match t.kind {
                BoundaryKind::Dirichlet => "dirichlet",
                BoundaryKind::Neumann => "neumann",
            };
            match t.target {
                TagTarget::All => {
                    let _ = writeln!(out, "tag * {kind}");
                }
                TagTarget::Side { patch, side } => {
                    let _ = writeln!(out, "tag {patch} {side} {kind}");
                }
            }
        }
        f.write_str(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_PATCH: &str = "\
# unit square, bilinear
patch 1 1
knots_u 0 0 1 1
knots_v 0 0 1 1
alpha 2.5
cp 0 0 0 1
cp 1 0 0 1
cp 0 1 0 1
cp 1 1 0 1
tag * dirichlet
tag 0 east neumann
";

    #[test]
    fn parses_a_single_patch() {
        let g = parse(ONE_PATCH).unwrap();
        assert_eq!(g.patches.len(), 1);
        assert_eq!(g.patches[0].alpha, 2.5);
        assert_eq!(g.patches[0].control_points[3], [1.0, 1.0, 0.0, 1.0]);
        let s = g.to_surface().unwrap();
        let c = s.edge_counts();
        assert_eq!((c.interior, c.dirichlet, c.neumann), (0, 3, 1));
    }

    #[test]
    fn missing_control_point_names_the_patch_line() {
        let truncated: String = ONE_PATCH.lines().take(8).map(|l| format!("{l}\n")).collect();
        let err = parse(&truncated).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("found 3"), "{err}");
    }

    #[test]
    fn truncated_record_names_its_line() {
        let text = ONE_PATCH.replace("cp 1 1 0 1", "cp 1 1");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.line, 9);
    }

    #[test]
    fn malformed_number_reports_field() {
        let text = ONE_PATCH.replace("cp 1 0 0 1", "cp 1 0x 0 1");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.line, 7);
        assert!(err.message.starts_with("field 2"), "{err}");
    }

    #[test]
    fn rejects_non_open_knots_and_bad_weights() {
        let err = parse(&ONE_PATCH.replace("knots_v 0 0 1 1", "knots_v 0 0.1 1 1")).unwrap_err();
        assert_eq!(err.line, 4);
        let err = parse(&ONE_PATCH.replace("cp 0 1 0 1", "cp 0 1 0 0")).unwrap_err();
        assert_eq!(err.line, 8);
    }

    #[test]
    fn rejects_tags_on_missing_patches() {
        let err = parse(&format!("{ONE_PATCH}tag 3 west neumann\n")).unwrap_err();
        assert_eq!(err.line, 12);
    }

    #[test]
    fn round_trip_is_exact() {
        let g = parse(ONE_PATCH).unwrap();
        let again = parse(&g.to_string()).unwrap();
        assert_eq!(g, again);
        let s = crate::cli::bundled::qcyl4(3, 2);
        let g = GeometryFile::from_surface(&s);
        let again = parse(&g.to_string()).unwrap();
        assert_eq!(g, again);
        assert_eq!(again.to_surface().unwrap(), s);
    }
}
