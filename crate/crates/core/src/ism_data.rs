//! Infinite-sites data: incidence and frequency matrices, the augmented
//! perfect phylogeny, the constraint vector and alignment ingestion.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counting::{sample_compatible_topology, Resolution};
use crate::genealogy::{GenealogyError, SamplingSchedule, TIME_TOL};

#[derive(Debug, Error)]
pub enum IsmError {
    #[error("malformed data: {0}")]
    Shape(String),
    #[error("sites {0:?} violate the infinite sites model")]
    Violation(Vec<(usize, usize)>),
    #[error("site {0} is not polymorphic")]
    NotPolymorphic(usize),
    #[error(transparent)]
    Schedule(#[from] GenealogyError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("no sampling date for sequence '{0}'")]
    MissingMetadata(String),
    #[error("cannot parse date '{0}'")]
    BadDate(String),
}

/// Haplotype-by-site 0/1 matrix; 1 marks the derived (mutant) state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidenceMatrix {
    rows: Vec<Vec<u8>>,
    haplotype_ids: Vec<String>,
    site_ids: Vec<String>,
}

impl IncidenceMatrix {
    pub fn new(rows: Vec<Vec<u8>>, haplotype_ids: Vec<String>, site_ids: Vec<String>) -> Result<Self, IsmError> {
        if rows.is_empty() {
            return Err(IsmError::Shape("need at least one haplotype".into()));
        }
        if haplotype_ids.len() != rows.len() {
            return Err(IsmError::Shape("one id per haplotype required".into()));
        }
        let z = site_ids.len();
        if rows.iter().any(|r| r.len() != z || r.iter().any(|&x| x > 1)) {
            return Err(IsmError::Shape("rows must be 0/1 vectors with one entry per site".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !rows.iter().all(|r| seen.insert(r)) {
            return Err(IsmError::Shape("haplotype rows must be distinct".into()));
        }
        Ok(IncidenceMatrix { rows, haplotype_ids, site_ids })
    }

    /// Matrix with generated ids `h1..`, `l1..`.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self, IsmError> {
        let z = rows.first().map_or(0, Vec::len);
        let h = (1..=rows.len()).map(|i| format!("h{i}")).collect();
        let s = (1..=z).map(|i| format!("l{i}")).collect();
        Self::new(rows, h, s)
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn z(&self) -> usize {
        self.site_ids.len()
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn haplotype_ids(&self) -> &[String] {
        &self.haplotype_ids
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    /// Haplotypes carrying the derived allele at `site`, ascending.
    pub fn carriers(&self, site: usize) -> Vec<usize> {
        (0..self.k()).filter(|&h| self.rows[h][site] == 1).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), IsmError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["haplotype".to_string()];
        header.extend(self.site_ids.iter().cloned());
        wr.write_record(&header)?;
        for (id, row) in self.haplotype_ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, IsmError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let site_ids: Vec<String> = rd.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| match v.trim() {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(IsmError::Shape(format!("incidence entry '{other}' is not 0/1"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Self::new(rows, ids, site_ids)
    }
}

/// Haplotype-by-sampling-time counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyMatrix {
    counts: Vec<Vec<usize>>,
}

impl FrequencyMatrix {
    pub fn new(counts: Vec<Vec<usize>>) -> Result<Self, IsmError> {
        let m = counts.first().map_or(0, Vec::len);
        if m == 0 || counts.iter().any(|r| r.len() != m) {
            return Err(IsmError::Shape("frequency rows must share a positive length".into()));
        }
        if counts.iter().any(|r| r.iter().sum::<usize>() == 0) {
            return Err(IsmError::Shape("every haplotype must be observed".into()));
        }
        Ok(FrequencyMatrix { counts })
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn m(&self) -> usize {
        self.counts[0].len()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.m()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Schedule with the given sampling times and this matrix's column sums.
    pub fn schedule(&self, times: Vec<f64>) -> Result<SamplingSchedule, IsmError> {
        Ok(SamplingSchedule::new(times, self.column_sums())?)
    }

    pub fn write_csv<W: Write>(&self, w: W, times: &[f64], ids: &[String]) -> Result<(), IsmError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["haplotype".to_string()];
        header.extend(times.iter().map(|t| t.to_string()));
        wr.write_record(&header)?;
        for (id, row) in ids.iter().zip(&self.counts) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads counts and the sampling times from the header row.
    pub fn read_csv<R: Read>(r: R) -> Result<(Self, Vec<f64>), IsmError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let times = rd
            .headers()?
            .iter()
            .skip(1)
            .map(|h| h.trim().parse::<f64>().map_err(|_| IsmError::Shape(format!("sampling time '{h}' is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut counts = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<usize>().map_err(|_| IsmError::Shape(format!("count '{v}' is not a nonnegative integer"))))
                .collect::<Result<Vec<_>, _>>()?;
            counts.push(row);
        }
        Ok((Self::new(counts)?, times))
    }
}

/// Pairs of sites whose carrier sets overlap without nesting.
pub fn check_ism(y1: &IncidenceMatrix) -> Result<(), Vec<(usize, usize)>> {
    let sets: Vec<Vec<usize>> = (0..y1.z()).map(|j| y1.carriers(j)).collect();
    let mut bad = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if conflict(&sets[i], &sets[j]) {
                bad.push((i, j));
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad)
    }
}

/// Sorted sets that intersect with neither containing the other.
fn conflict(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j, mut both, mut only_a, mut only_b) = (0, 0, false, false, false);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => {
                both = true;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                only_a = true;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                only_b = true;
                j += 1;
            }
        }
    }
    only_a |= i < a.len();
    only_b |= j < b.len();
    both && only_a && only_b
}

/// Label of a perfect-phylogeny leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeafLabel {
    pub haplotype: usize,
    pub group: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Sites labelling the edge above this node.
    pub edge_sites: Vec<usize>,
    /// Number of sequences below this node, `|V|`.
    pub size: usize,
    pub group_counts: Vec<usize>,
    pub leaf: Option<LeafLabel>,
}

impl PpNode {
    pub fn edge_mutations(&self) -> usize {
        self.edge_sites.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Augmented perfect phylogeny. Node 0 is the root; ids follow a canonical
/// preorder with children ordered by decreasing size.
///
/// Leaves without mutations that stand for several identical sequences are
/// split into one singleton leaf per sequence: such copies are exchangeable and
/// need not form a clade of the genealogy. After the split, every non-root,
/// non-singleton node carries at least one mutation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfectPhylogeny {
    nodes: Vec<PpNode>,
    schedule: SamplingSchedule,
    haplotype_ids: Vec<String>,
    site_ids: Vec<String>,
}

impl PerfectPhylogeny {
    pub fn nodes(&self) -> &[PpNode] {
        &self.nodes
    }

    pub fn node(&self, v: usize) -> &PpNode {
        &self.nodes[v]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn schedule(&self) -> &SamplingSchedule {
        &self.schedule
    }

    pub fn n(&self) -> usize {
        self.nodes[0].size
    }

    pub fn m(&self) -> usize {
        self.schedule.m()
    }

    pub fn z(&self) -> usize {
        self.nodes.iter().map(PpNode::edge_mutations).sum()
    }

    pub fn is_singleton(&self, v: usize) -> bool {
        self.nodes[v].size == 1
    }

    /// Non-singleton nodes `V*`, ascending.
    pub fn non_singleton(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| !self.is_singleton(v)).collect()
    }

    /// Number of vintages a node absorbs in any allocation.
    pub fn multiplicity(&self, v: usize) -> usize {
        let nd = &self.nodes[v];
        if nd.is_leaf() {
            nd.size - 1
        } else {
            nd.children.len() - 1
        }
    }

    /// Singleton children of `v` as (group, mutation count).
    pub fn singleton_children(&self, v: usize) -> Vec<(usize, usize)> {
        self.nodes[v]
            .children
            .iter()
            .filter(|&&c| self.is_singleton(c))
            .map(|&c| {
                let nd = &self.nodes[c];
                (nd.leaf.expect("singletons are leaves").group, nd.edge_mutations())
            })
            .collect()
    }

    pub fn haplotype_ids(&self) -> &[String] {
        &self.haplotype_ids
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    /// Sites on the path from the root to `v`.
    pub fn path_sites(&self, mut v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        loop {
            out.extend(&self.nodes[v].edge_sites);
            match self.nodes[v].parent {
                Some(p) => v = p,
                None => break,
            }
        }
        out.sort_unstable();
        out
    }

    /// Recovers `(Y1, Y2)` with the original haplotype and site order.
    pub fn to_matrices(&self) -> (IncidenceMatrix, FrequencyMatrix) {
        let k = self.haplotype_ids.len();
        let z = self.site_ids.len();
        let mut rows = vec![vec![0u8; z]; k];
        let mut counts = vec![vec![0usize; self.m()]; k];
        for (v, nd) in self.nodes.iter().enumerate() {
            if let Some(l) = nd.leaf {
                for s in self.path_sites(v) {
                    rows[l.haplotype][s] = 1;
                }
                counts[l.haplotype][l.group] += nd.size;
            }
        }
        (
            IncidenceMatrix::new(rows, self.haplotype_ids.clone(), self.site_ids.clone()).expect("valid reconstruction"),
            FrequencyMatrix::new(counts).expect("valid reconstruction"),
        )
    }
}

struct Proto {
    parent: Option<usize>,
    children: Vec<usize>,
    edge_sites: Vec<usize>,
    leaf: Option<LeafLabel>,
    size: usize,
}

/// Builds the augmented perfect phylogeny of `(Y1, Y2)`.
pub fn build_perfect_phylogeny(
    y1: &IncidenceMatrix,
    y2: &FrequencyMatrix,
    schedule: &SamplingSchedule,
) -> Result<PerfectPhylogeny, IsmError> {
    let k = y1.k();
    let m = schedule.m();
    if y2.k() != k || y2.m() != m {
        return Err(IsmError::Shape(format!("Y1 has {k} haplotypes, Y2 is {}x{}, schedule has {m} times", y2.k(), y2.m())));
    }
    if y2.column_sums() != schedule.counts() {
        return Err(IsmError::Shape("Y2 column sums differ from the sampling counts".into()));
    }
    check_ism(y1).map_err(IsmError::Violation)?;

    // Distinct carrier sets become clades.
    let mut clades: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for j in 0..y1.z() {
        let c = y1.carriers(j);
        if c.is_empty() || c.len() == k {
            return Err(IsmError::NotPolymorphic(j));
        }
        clades.entry(c).or_default().push(j);
    }
    let mut order: Vec<(Vec<usize>, Vec<usize>)> = clades.into_iter().collect();
    order.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    let mut proto = vec![Proto { parent: None, children: vec![], edge_sites: vec![], leaf: None, size: 0 }];
    // For each clade: its node id and haplotype set.
    let mut clade_nodes: Vec<(usize, Vec<usize>)> = Vec::new();
    for (set, sites) in order {
        let parent = clade_nodes
            .iter()
            .filter(|(_, s)| s.len() > set.len() && set.iter().all(|h| s.binary_search(h).is_ok()))
            .min_by_key(|(_, s)| s.len())
            .map_or(0, |(id, _)| *id);
        let id = proto.len();
        proto.push(Proto { parent: Some(parent), children: vec![], edge_sites: sites, leaf: None, size: 0 });
        proto[parent].children.push(id);
        clade_nodes.push((id, set));
    }

    let counts = y2.counts();
    for h in 0..k {
        let home = clade_nodes.iter().filter(|(_, s)| s.binary_search(&h).is_ok()).min_by_key(|(_, s)| s.len());
        let groups: Vec<(usize, usize)> = counts[h].iter().copied().enumerate().filter(|&(_, c)| c > 0).collect();
        match home {
            Some((id, set)) if set.len() == 1 => {
                let id = *id;
                if groups.len() == 1 {
                    let (g, c) = groups[0];
                    proto[id].leaf = Some(LeafLabel { haplotype: h, group: g });
                    proto[id].size = c;
                } else {
                    attach_singletons(&mut proto, id, h, &groups);
                }
            }
            Some((id, _)) => {
                let id = *id;
                attach_singletons(&mut proto, id, h, &groups);
            }
            None => attach_singletons(&mut proto, 0, h, &groups),
        }
    }

    // Sizes, bottom-up (children always have larger proto ids than parents).
    for v in (0..proto.len()).rev() {
        if !proto[v].children.is_empty() {
            proto[v].size = proto[v].children.iter().map(|&c| proto[c].size).sum();
        }
    }
    let min_hap: Vec<usize> = {
        let mut mh = vec![usize::MAX; proto.len()];
        for v in (0..proto.len()).rev() {
            mh[v] = match proto[v].leaf {
                Some(l) if proto[v].children.is_empty() => l.haplotype,
                _ => proto[v].children.iter().map(|&c| mh[c]).min().unwrap_or(usize::MAX),
            };
        }
        mh
    };

    // Canonical preorder renumbering.
    let mut new_id = vec![usize::MAX; proto.len()];
    let mut preorder = Vec::with_capacity(proto.len());
    let mut stack = vec![0usize];
    while let Some(v) = stack.pop() {
        new_id[v] = preorder.len();
        preorder.push(v);
        let mut ch = proto[v].children.clone();
        ch.sort_by_key(|&c| (std::cmp::Reverse(proto[c].size), min_hap[c], proto[c].leaf.map_or(0, |l| l.group)));
        stack.extend(ch.into_iter().rev());
    }
    let mut nodes: Vec<PpNode> = preorder
        .iter()
        .map(|&v| PpNode {
            parent: proto[v].parent.map(|p| new_id[p]),
            children: Vec::new(),
            edge_sites: proto[v].edge_sites.clone(),
            size: proto[v].size,
            group_counts: vec![0; m],
            leaf: if proto[v].children.is_empty() { proto[v].leaf } else { None },
        })
        .collect();
    for v in 1..nodes.len() {
        let p = nodes[v].parent.expect("non-root");
        nodes[p].children.push(v);
    }
    for v in (0..nodes.len()).rev() {
        if let Some(l) = nodes[v].leaf {
            nodes[v].group_counts[l.group] = nodes[v].size;
        }
        if let Some(p) = nodes[v].parent {
            let gc = nodes[v].group_counts.clone();
            for (a, b) in nodes[p].group_counts.iter_mut().zip(gc) {
                *a += b;
            }
        }
    }
    Ok(PerfectPhylogeny { nodes, schedule: schedule.clone(), haplotype_ids: y1.haplotype_ids().to_vec(), site_ids: y1.site_ids().to_vec() })
}

fn attach_singletons(proto: &mut Vec<Proto>, parent: usize, h: usize, groups: &[(usize, usize)]) {
    for &(g, c) in groups {
        for _ in 0..c {
            let id = proto.len();
            proto.push(Proto {
                parent: Some(parent),
                children: vec![],
                edge_sites: vec![],
                leaf: Some(LeafLabel { haplotype: h, group: g }),
                size: 1,
            });
            proto[parent].children.push(id);
        }
    }
}

/// Maximum number of coalescent events before each sampling time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintVector(pub Vec<usize>);

impl ConstraintVector {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Whether `times` put at most `c_j` coalescences strictly before each `s_j`.
    pub fn admits(&self, times: &[f64], schedule: &SamplingSchedule) -> bool {
        schedule.times().iter().zip(&self.0).all(|(&s, &c)| times.iter().filter(|&&t| t < s - TIME_TOL).count() <= c)
    }
}

/// Greedy search: start from the schedule's upper bounds and lower the tail
/// of the placement vector until a compatible topology can be built.
pub fn compute_constraints(t: &PerfectPhylogeny, schedule: &SamplingSchedule) -> ConstraintVector {
    let m = schedule.m();
    let mut add = vec![0usize; m];
    // Compatibility of a placement does not depend on the random choices made
    // along the way, so a fixed stream suffices.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cum = 0;
    for i in 1..m {
        cum += schedule.counts()[i - 1];
        // Entries after i share add[i]: no events between s_i and later times,
        // which never binds the later constraints.
        for a in add.iter_mut().skip(i) {
            *a = cum - 1;
        }
        while sample_compatible_topology(t, &add, Resolution::Tajima, &mut rng).is_none() {
            for a in add.iter_mut().skip(i) {
                *a -= 1;
            }
        }
    }
    let c = add;
    ConstraintVector(c)
}

/// How the ancestral allele is determined at each site.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AncestralState {
    Reference(String),
    Majority,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DroppedSites {
    /// Ambiguity codes or gaps in some sequence.
    pub ambiguous: Vec<usize>,
    /// More than one derived allele.
    pub multiallelic: Vec<usize>,
    /// Every sequence carries the derived allele.
    pub fixed_derived: Vec<usize>,
    /// Removed to restore infinite-sites compatibility.
    pub ism_conflicts: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub y1: IncidenceMatrix,
    pub y2: FrequencyMatrix,
    pub schedule: SamplingSchedule,
    pub dropped: DroppedSites,
    pub warnings: Vec<String>,
    /// Alignment columns kept, in the order of `Y1`'s sites.
    pub kept_columns: Vec<usize>,
}

/// Minimal FASTA reader: `>id` header lines followed by sequence lines.
pub fn parse_fasta(text: &str) -> Result<Vec<(String, String)>, IsmError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(h) = line.strip_prefix('>') {
            let id = h.split_whitespace().next().unwrap_or_default().to_string();
            out.push((id, String::new()));
        } else {
            match out.last_mut() {
                Some((_, s)) => s.push_str(line),
                None => return Err(IsmError::Alignment("sequence data before the first header".into())),
            }
        }
    }
    Ok(out)
}

/// Metadata CSV with columns `sequence_id,date`.
pub fn parse_metadata<R: Read>(r: R) -> Result<Vec<(String, String)>, IsmError> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let id = rec.get(0).ok_or_else(|| IsmError::Shape("metadata row without id".into()))?;
        let date = rec.get(1).ok_or_else(|| IsmError::Shape("metadata row without date".into()))?;
        out.push((id.trim().to_string(), date.trim().to_string()));
    }
    Ok(out)
}

/// Decimal year of a numeric value or an ISO-8601 calendar date.
pub fn decimal_year(s: &str) -> Result<f64, IsmError> {
    use chrono::Datelike;
    if let Ok(v) = s.parse::<f64>() {
        if v.is_finite() {
            return Ok(v);
        }
    }
    let d = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| IsmError::BadDate(s.to_string()))?;
    let days = if d.leap_year() { 366.0 } else { 365.0 };
    Ok(d.year() as f64 + d.ordinal0() as f64 / days)
}

fn is_base(c: u8) -> bool {
    matches!(c, b'A' | b'C' | b'G' | b'T')
}

/// Extracts ISM data from an alignment.
pub fn ingest_alignment(
    sequences: &[(String, String)],
    ancestral: &AncestralState,
    metadata: &[(String, String)],
    units_per_year: f64,
) -> Result<Ingested, IsmError> {
    if sequences.len() < 2 {
        return Err(IsmError::Alignment("need at least two sequences".into()));
    }
    let seqs: Vec<Vec<u8>> = sequences.iter().map(|(_, s)| s.to_ascii_uppercase().into_bytes()).collect();
    let len = seqs[0].len();
    if seqs.iter().any(|s| s.len() != len) {
        return Err(IsmError::Alignment("sequences differ in length".into()));
    }
    let reference = match ancestral {
        AncestralState::Reference(r) => {
            let r = r.to_ascii_uppercase().into_bytes();
            if r.len() != len {
                return Err(IsmError::Alignment("ancestral reference length differs from the alignment".into()));
            }
            Some(r)
        }
        AncestralState::Majority => None,
    };
    let mut warnings = Vec::new();
    if reference.is_none() {
        warnings.push("ancestral states inferred by majority rule".to_string());
    }

    let dates: BTreeMap<&str, &str> = metadata.iter().map(|(i, d)| (i.as_str(), d.as_str())).collect();
    let years = sequences
        .iter()
        .map(|(id, _)| {
            let d = dates.get(id.as_str()).ok_or_else(|| IsmError::MissingMetadata(id.clone()))?;
            decimal_year(d)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let newest = years.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let times: Vec<f64> = years.iter().map(|y| (newest - y) * units_per_year).collect();
    let mut distinct: Vec<f64> = Vec::new();
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    for t in sorted {
        if distinct.last().map_or(true, |&l| t - l > TIME_TOL) {
            distinct.push(t);
        }
    }
    let group_of: Vec<usize> = times.iter().map(|&t| distinct.iter().position(|&d| (d - t).abs() <= TIME_TOL).expect("listed")).collect();
    distinct[0] = 0.0;

    let mut dropped = DroppedSites::default();
    let mut columns: Vec<(usize, Vec<usize>)> = Vec::new();
    for site in 0..len {
        let col: Vec<u8> = seqs.iter().map(|s| s[site]).collect();
        let anc = match &reference {
            Some(r) => r[site],
            None => {
                let mut tally: BTreeMap<u8, usize> = BTreeMap::new();
                for &c in col.iter().filter(|&&c| is_base(c)) {
                    *tally.entry(c).or_default() += 1;
                }
                // Ties go to the alphabetically first base.
                tally.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(b'N', |(&c, _)| c)
            }
        };
        if !is_base(anc) || col.iter().any(|&c| !is_base(c)) {
            if col.windows(2).any(|w| w[0] != w[1]) || !is_base(anc) {
                dropped.ambiguous.push(site);
            }
            continue;
        }
        let derived: std::collections::BTreeSet<u8> = col.iter().copied().filter(|&c| c != anc).collect();
        match derived.len() {
            0 => continue,
            1 => {}
            _ => {
                dropped.multiallelic.push(site);
                continue;
            }
        }
        let carriers: Vec<usize> = (0..seqs.len()).filter(|&i| col[i] != anc).collect();
        if carriers.len() == seqs.len() {
            dropped.fixed_derived.push(site);
            continue;
        }
        columns.push((site, carriers));
    }

    // Greedy removal of the most conflicting site until the rest is compatible.
    loop {
        let mut degree = vec![0usize; columns.len()];
        for i in 0..columns.len() {
            for j in i + 1..columns.len() {
                if conflict(&columns[i].1, &columns[j].1) {
                    degree[i] += 1;
                    degree[j] += 1;
                }
            }
        }
        let worst = degree.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)));
        match worst {
            Some((i, &d)) if d > 0 => {
                dropped.ism_conflicts.push(columns[i].0);
                columns.remove(i);
            }
            _ => break,
        }
    }
    dropped.ism_conflicts.sort_unstable();

    // Haplotypes in order of first appearance.
    let mut hap_rows: Vec<Vec<u8>> = Vec::new();
    let mut hap_ids: Vec<String> = Vec::new();
    let mut hap_counts: Vec<Vec<usize>> = Vec::new();
    for (i, (id, _)) in sequences.iter().enumerate() {
        let row: Vec<u8> = columns.iter().map(|(_, c)| u8::from(c.binary_search(&i).is_ok())).collect();
        let h = match hap_rows.iter().position(|r| *r == row) {
            Some(h) => h,
            None => {
                hap_rows.push(row);
                hap_ids.push(id.clone());
                hap_counts.push(vec![0; distinct.len()]);
                hap_rows.len() - 1
            }
        };
        hap_counts[h][group_of[i]] += 1;
    }
    let site_ids = columns.iter().map(|(s, _)| format!("site{}", s + 1)).collect();
    let kept_columns = columns.iter().map(|(s, _)| *s).collect();
    let y1 = IncidenceMatrix::new(hap_rows, hap_ids, site_ids)?;
    let y2 = FrequencyMatrix::new(hap_counts)?;
    let schedule = y2.schedule(distinct)?;
    Ok(Ingested { y1, y2, schedule, dropped, warnings, kept_columns })
}
