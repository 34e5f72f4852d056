//! Reader and writer for the ASCII MSH 4.1 subset: nodes, 2-node lines,
//! 3-node triangles and 4-node tetrahedra, with physical tags.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::{face_key, SubdomainMesh, Vec3};
use crate::error::{Error, Result};

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { lines: text.lines().collect(), pos: 0 }
    }

    /// Next non-empty line and its 1-based number.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos].trim();
            self.pos += 1;
            if !line.is_empty() {
                return Some((self.pos, line));
            }
        }
        None
    }

    fn expect_line(&mut self) -> Result<(usize, &'a str)> {
        let last = self.lines.len();
        self.next().ok_or_else(|| Error::parse(last, "unexpected end of file"))
    }

    fn numbers<T: std::str::FromStr>(&mut self, min: usize) -> Result<(usize, Vec<T>)> {
        let (n, line) = self.expect_line()?;
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<T>().map_err(|_| Error::parse(n, format!("cannot parse `{t}`"))))
            .collect::<Result<Vec<T>>>()?;
        if values.len() < min {
            return Err(Error::parse(n, format!("expected at least {min} values, found {}", values.len())));
        }
        Ok((n, values))
    }

    fn expect_end(&mut self, section: &str) -> Result<()> {
        let (n, line) = self.expect_line()?;
        if line != format!("$End{section}") {
            return Err(Error::parse(n, format!("expected $End{section}, found `{line}`")));
        }
        Ok(())
    }
}

struct Element {
    line: usize,
    dim: usize,
    tag: i32,
    nodes: Vec<usize>,
}

fn element_dim(kind: usize, line: usize) -> Result<usize> {
    match kind {
        1 => Ok(1),
        2 => Ok(2),
        4 => Ok(3),
        other => Err(Error::parse(line, format!("unsupported element type {other}"))),
    }
}

fn parse_entities(lines: &mut Lines, physical: &mut HashMap<(usize, i64), i32>) -> Result<()> {
    let (_, counts) = lines.numbers::<usize>(4)?;
    for dim in 0..4 {
        for _ in 0..counts[dim] {
            let (n, line) = lines.expect_line()?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let skip = if dim == 0 { 4 } else { 7 };
            let bad = || Error::parse(n, "malformed entity record");
            let tag: i64 = tokens.first().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            let count: usize = tokens.get(skip).and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            if count > 0 {
                let first: i32 = tokens.get(skip + 1).and_then(|t| t.parse().ok()).ok_or_else(bad)?;
                physical.insert((dim, tag), first);
            }
        }
    }
    lines.expect_end("Entities")
}

/// Parses MSH 4.1 ASCII text. The mesh dimension is the highest element
/// dimension present; elements one dimension lower tag matching boundary faces.
pub fn parse_msh(text: &str) -> Result<SubdomainMesh> {
    let mut lines = Lines::new(text);
    let mut seen_format = false;
    let mut physical: Option<HashMap<(usize, i64), i32>> = None;
    let mut node_index: HashMap<usize, usize> = HashMap::new();
    let mut nodes: Vec<Vec3> = Vec::new();
    let mut elements: Vec<Element> = Vec::new();

    while let Some((n, line)) = lines.next() {
        match line {
            "$MeshFormat" => {
                let (vn, header) = lines.expect_line()?;
                let fields: Vec<&str> = header.split_whitespace().collect();
                if fields.len() < 3 || fields[0] != "4.1" {
                    return Err(Error::parse(vn, format!("unsupported MSH version `{header}`, expected 4.1")));
                }
                if fields[1] != "0" {
                    return Err(Error::parse(vn, "binary MSH files are not supported"));
                }
                lines.expect_end("MeshFormat")?;
                seen_format = true;
            }
            "$PhysicalNames" => {
                let (_, count) = lines.numbers::<usize>(1)?;
                for _ in 0..count[0] {
                    lines.expect_line()?;
                }
                lines.expect_end("PhysicalNames")?;
            }
            "$Entities" => {
                let mut map = HashMap::new();
                parse_entities(&mut lines, &mut map)?;
                physical = Some(map);
            }
            "$Nodes" => {
                let (_, header) = lines.numbers::<usize>(4)?;
                for _ in 0..header[0] {
                    let (bn, block) = lines.numbers::<usize>(4)?;
                    let count = block[3];
                    if block[2] != 0 {
                        return Err(Error::parse(bn, "parametric nodes are not supported"));
                    }
                    let mut tags = Vec::with_capacity(count);
                    for _ in 0..count {
                        let (tn, t) = lines.numbers::<usize>(1)?;
                        if node_index.contains_key(&t[0]) {
                            return Err(Error::parse(tn, format!("duplicate node tag {}", t[0])));
                        }
                        tags.push(t[0]);
                    }
                    for tag in tags {
                        let (_, xyz) = lines.numbers::<f64>(3)?;
                        node_index.insert(tag, nodes.len());
                        nodes.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                    }
                }
                lines.expect_end("Nodes")?;
            }
            "$Elements" => {
                let (_, header) = lines.numbers::<usize>(4)?;
                for _ in 0..header[0] {
                    let (bn, block) = lines.numbers::<i64>(4)?;
                    let entity_dim = block[0] as usize;
                    let entity_tag = block[1];
                    let dim = element_dim(block[2] as usize, bn)?;
                    if dim != entity_dim {
                        return Err(Error::parse(bn, "element type does not match the entity dimension"));
                    }
                    let tag = match &physical {
                        Some(map) => map.get(&(dim, entity_tag)).copied().unwrap_or(0),
                        None => entity_tag as i32,
                    };
                    for _ in 0..block[3] {
                        let (en, values) = lines.numbers::<usize>(dim + 2)?;
                        if values.len() != dim + 2 {
                            return Err(Error::parse(en, format!("expected {} node tags", dim + 1)));
                        }
                        let refs = values[1..]
                            .iter()
                            .map(|t| {
                                node_index
                                    .get(t)
                                    .copied()
                                    .ok_or_else(|| Error::parse(en, format!("element references missing node {t}")))
                            })
                            .collect::<Result<Vec<usize>>>()?;
                        elements.push(Element { line: en, dim, tag, nodes: refs });
                    }
                }
                lines.expect_end("Elements")?;
            }
            other if other.starts_with('$') => {
                return Err(Error::parse(n, format!("unsupported section `{other}`")));
            }
            other => return Err(Error::parse(n, format!("unexpected content `{other}`"))),
        }
    }
    if !seen_format {
        return Err(Error::parse(1, "missing $MeshFormat section"));
    }
    let dim = elements.iter().map(|e| e.dim).max().ok_or_else(|| Error::parse(lines.pos, "no elements"))?;

    let mut cells = Vec::new();
    let mut tags = Vec::new();
    for e in elements.iter().filter(|e| e.dim == dim) {
        if dim == 3 {
            let p: Vec<Vec3> = e.nodes.iter().map(|&i| nodes[i]).collect();
            let det = (p[1] - p[0]).dot(&(p[2] - p[0]).cross(&(p[3] - p[0])));
            if det < 0.0 {
                return Err(Error::parse(e.line, "inverted tetrahedron"));
            }
        }
        cells.extend_from_slice(&e.nodes);
        tags.push(e.tag);
    }
    let mut mesh = SubdomainMesh::new(dim, nodes, cells, tags)?;
    if dim > 1 {
        let index = mesh.face_index();
        for e in elements.iter().filter(|e| e.dim + 1 == dim) {
            if let Some(&f) = index.get(&face_key(&e.nodes)) {
                if mesh.is_boundary_face(f) {
                    mesh.set_boundary_tag(f, e.tag)?;
                }
            }
        }
    }
    Ok(mesh)
}

pub fn load_msh(path: impl AsRef<Path>) -> Result<SubdomainMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_msh(&text)
}

fn element_type(dim: usize) -> usize {
    match dim {
        1 => 1,
        2 => 2,
        _ => 4,
    }
}

/// Serializes a mesh as MSH 4.1 ASCII. Cell tags and boundary tags become
/// physical tags of one entity per distinct tag; coordinates are written with
/// shortest round-trip formatting.
pub fn write_msh(mesh: &SubdomainMesh) -> String {
    let dim = mesh.dim();
    let mut by_tag: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for c in 0..mesh.num_cells() {
        by_tag.entry(mesh.cell_tag(c)).or_default().push(c);
    }
    let mut faces_by_tag: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (&f, &tag) in mesh.boundary_tags() {
        faces_by_tag.entry(tag).or_default().push(f);
    }
    let (lo, hi) = mesh.bounds();
    let bbox = format!("{} {} {} {} {} {}", lo.x, lo.y, lo.z, hi.x, hi.y, hi.z);

    let mut out = String::new();
    out.push_str("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n$Entities\n");
    let mut counts = [0usize; 4];
    counts[dim] = by_tag.len();
    counts[dim - 1] += faces_by_tag.len();
    let _ = writeln!(out, "{} {} {} {}", counts[0], counts[1], counts[2], counts[3]);
    let entity = |out: &mut String, d: usize, id: usize, tag: i32| {
        let phys = if tag != 0 { format!("1 {tag}") } else { "0".to_string() };
        if d == 0 {
            let _ = writeln!(out, "{id} {} {} {} {phys}", lo.x, lo.y, lo.z);
        } else {
            let _ = writeln!(out, "{id} {bbox} {phys} 0");
        }
    };
    for d in 0..=dim {
        if d == dim - 1 {
            for (i, &tag) in faces_by_tag.keys().enumerate() {
                entity(&mut out, d, i + 1, tag);
            }
        }
        if d == dim {
            for (i, &tag) in by_tag.keys().enumerate() {
                entity(&mut out, d, i + 1, tag);
            }
        }
    }
    out.push_str("$EndEntities\n$Nodes\n");
    let n = mesh.num_nodes();
    let _ = writeln!(out, "1 {n} 1 {n}\n{dim} 1 0 {n}");
    for i in 1..=n {
        let _ = writeln!(out, "{i}");
    }
    for p in mesh.nodes() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out.push_str("$EndNodes\n$Elements\n");
    let total = mesh.num_cells() + mesh.boundary_tags().len();
    let _ = writeln!(out, "{} {total} 1 {total}", by_tag.len() + faces_by_tag.len());
    let mut next = 1;
    for (i, faces) in faces_by_tag.values().enumerate() {
        let _ = writeln!(out, "{} {} {} {}", dim - 1, i + 1, element_type(dim - 1).max(1), faces.len());
        for &f in faces {
            let _ = write!(out, "{next}");
            for &v in mesh.face_nodes(f) {
                let _ = write!(out, " {}", v + 1);
            }
            out.push('\n');
            next += 1;
        }
    }
    for (i, cells) in by_tag.values().enumerate() {
        let _ = writeln!(out, "{dim} {} {} {}", i + 1, element_type(dim), cells.len());
        for &c in cells {
            let _ = write!(out, "{next}");
            for &v in mesh.cell_nodes(c) {
                let _ = write!(out, " {}", v + 1);
            }
            out.push('\n');
            next += 1;
        }
    }
    out.push_str("$EndElements\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;

    const REFERENCE_TET: &str = "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n\
        $Nodes\n1 4 1 4\n3 1 0 4\n1\n2\n3\n4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n$EndNodes\n\
        $Elements\n1 1 1 1\n3 1 4 1\n1 1 2 3 4\n$EndElements\n";

    #[test]
    fn reference_tetrahedron() {
        let mesh = parse_msh(REFERENCE_TET).unwrap();
        assert_eq!(mesh.num_cells(), 1);
        assert!((mesh.cell_volume(0) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(mesh.cell_tag(0), 1);
    }

    #[test]
    fn missing_node_is_a_parse_error() {
        let text = REFERENCE_TET.replace("1 1 2 3 4", "1 1 2 3 9");
        match parse_msh(&text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 19);
                assert!(message.contains("missing node 9"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_tetrahedron_is_rejected() {
        let text = REFERENCE_TET.replace("1 1 2 3 4", "1 2 1 3 4");
        assert!(matches!(parse_msh(&text), Err(Error::Parse { line: 19, .. })));
    }

    #[test]
    fn unsupported_version_and_sections() {
        let text = REFERENCE_TET.replace("4.1 0 8", "2.2 0 8");
        assert!(matches!(parse_msh(&text), Err(Error::Parse { line: 2, .. })));
        let text = format!("{REFERENCE_TET}$Periodic\n0\n$EndPeriodic\n");
        assert!(matches!(parse_msh(&text), Err(Error::Parse { .. })));
        let text = REFERENCE_TET.replace("3 1 4 1", "3 1 5 1");
        assert!(matches!(parse_msh(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn box_mesh_round_trip() {
        let mesh = build_box_mesh([0.52, 0.34, 0.40], 0.05, &[]).unwrap();
        let back = parse_msh(&write_msh(&mesh)).unwrap();
        assert_eq!(back.num_nodes(), mesh.num_nodes());
        assert_eq!(back.num_cells(), mesh.num_cells());
        for (a, b) in mesh.nodes().iter().zip(back.nodes()) {
            assert!((a - b).norm() <= 1e-15);
        }
        for c in 0..mesh.num_cells() {
            assert_eq!(mesh.cell_nodes(c), back.cell_nodes(c));
        }
        assert_eq!(mesh.boundary_tags().len(), back.boundary_tags().len());
        for (&f, &tag) in mesh.boundary_tags() {
            let g = back.find_face(mesh.face_nodes(f)).unwrap();
            assert_eq!(back.boundary_tag(g), Some(tag));
        }
    }
}
