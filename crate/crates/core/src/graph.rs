//! Interaction data, knowledge-graph triples and the immutable adjacency
//! index that aggregation and training read from.
//!
//! Users and KG entities live in separate id spaces. Items are the prefix
//! `0..num_items` of the entity id space.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::binio;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: cannot parse token {token:?} as a non-negative integer")]
    Parse {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: expected 3 integers (head relation tail), found {found}")]
    TripleArity {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("inverse relations were already added to this triple set")]
    InverseAlreadyApplied,
    #[error("triple set has no inverse relations; call add_inverse_relations first")]
    InverseMissing,
    #[error("item id {item} is not a valid entity id (num_entities = {num_entities})")]
    ItemNotEntity { item: usize, num_entities: usize },
    #[error("num_items override {requested} is smaller than the largest item id + 1 ({needed})")]
    NumItemsTooSmall { requested: usize, needed: usize },
    #[error("user count mismatch: train has {train}, other split has {other}")]
    UserCountMismatch { train: usize, other: usize },
    #[error("index checkpoint: {0}")]
    Checkpoint(String),
}

/// Non-fatal conditions noticed while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    /// A user line carried no item ids; the user is kept with no positives.
    EmptyUser { user: usize, line: usize },
    /// A user id appeared on more than one line; the lists were merged.
    DuplicateUser { user: usize, line: usize },
    /// Canonical relation ids skip these values.
    RelationGap { missing: Vec<usize> },
    /// The same triple appeared more than once; it is stored once.
    DuplicateTriples { count: usize },
}

/// Observed user-item feedback (the positive set).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InteractionSet {
    pub num_users: usize,
    pub num_items: usize,
    /// `positives[u]` is sorted and deduplicated.
    pub positives: Vec<Vec<usize>>,
}

impl InteractionSet {
    /// Builds a set from per-user lists, sorting and deduplicating each list.
    pub fn from_lists(num_items: usize, mut positives: Vec<Vec<usize>>) -> Self {
        for list in &mut positives {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            num_users: positives.len(),
            num_items,
            positives,
        }
    }

    pub fn num_interactions(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.positives
            .get(user)
            .is_some_and(|p| p.binary_search(&item).is_ok())
    }

    pub fn max_item_id(&self) -> Option<usize> {
        self.positives.iter().filter_map(|p| p.last().copied()).max()
    }

    /// Overrides the item count. Fails if an existing item id would fall outside.
    pub fn with_num_items(mut self, num_items: usize) -> Result<Self, GraphError> {
        let needed = self.max_item_id().map_or(0, |m| m + 1);
        if num_items < needed {
            return Err(GraphError::NumItemsTooSmall {
                requested: num_items,
                needed,
            });
        }
        self.num_items = num_items;
        Ok(self)
    }

    /// Pads the user dimension with empty lists.
    pub fn with_num_users(mut self, num_users: usize) -> Self {
        if num_users > self.positives.len() {
            self.positives.resize(num_users, Vec::new());
        }
        self.num_users = self.positives.len();
        self
    }

    /// All `(user, item)` pairs in user-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .collect()
    }

    /// Writes the set in the whitespace-separated line format.
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (u, items) in self.positives.iter().enumerate() {
            write!(w, "{u}")?;
            for i in items {
                write!(w, " {i}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let io_err = |source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let f = File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(f);
        self.write(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Knowledge-graph triples. Stored sorted by `(head, relation, tail)` with no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleSet {
    pub num_entities: usize,
    /// Relation count including inverse relations once they are added.
    pub num_relations: usize,
    pub num_canonical_relations: usize,
    inverse_applied: bool,
    triples: Vec<Triple>,
}

impl TripleSet {
    /// Builds a canonical triple set; counts are derived from the largest ids.
    pub fn canonical(triples: Vec<Triple>) -> Self {
        let num_entities = triples
            .iter()
            .map(|t| t.head.max(t.tail) + 1)
            .max()
            .unwrap_or(0);
        let num_relations = triples.iter().map(|t| t.relation + 1).max().unwrap_or(0);
        Self::canonical_with_counts(triples, num_entities, num_relations)
    }

    /// Like [`TripleSet::canonical`] but with explicit minimum counts.
    pub fn canonical_with_counts(
        mut triples: Vec<Triple>,
        num_entities: usize,
        num_relations: usize,
    ) -> Self {
        triples.sort_unstable();
        triples.dedup();
        let num_entities = triples
            .iter()
            .map(|t| t.head.max(t.tail) + 1)
            .max()
            .unwrap_or(0)
            .max(num_entities);
        let num_relations = triples
            .iter()
            .map(|t| t.relation + 1)
            .max()
            .unwrap_or(0)
            .max(num_relations);
        Self {
            num_entities,
            num_relations,
            num_canonical_relations: num_relations,
            inverse_applied: false,
            triples,
        }
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse_applied
    }

    /// Raises the entity count, e.g. so that every item id is an entity.
    pub fn with_min_entities(mut self, n: usize) -> Self {
        self.num_entities = self.num_entities.max(n);
        self
    }

    /// The canonical triples alone, as a set without inverse relations.
    pub fn canonical_triples(&self) -> TripleSet {
        let kept = self
            .triples
            .iter()
            .filter(|t| t.relation < self.num_canonical_relations)
            .copied()
            .collect();
        TripleSet::canonical_with_counts(kept, self.num_entities, self.num_canonical_relations)
    }

    /// Number of canonical triples (half the stored count after inversion).
    pub fn num_canonical_triples(&self) -> usize {
        if self.inverse_applied {
            self.triples
                .iter()
                .filter(|t| t.relation < self.num_canonical_relations)
                .count()
        } else {
            self.triples.len()
        }
    }
}

/// Adds `(t, r + R, h)` for every canonical `(h, r, t)`, doubling the relation count.
pub fn add_inverse_relations(set: &TripleSet) -> Result<TripleSet, GraphError> {
    if set.inverse_applied {
        return Err(GraphError::InverseAlreadyApplied);
    }
    let r_canon = set.num_relations;
    let mut triples = Vec::with_capacity(set.triples.len() * 2);
    triples.extend_from_slice(&set.triples);
    triples.extend(
        set.triples
            .iter()
            .map(|t| Triple::new(t.tail, t.relation + r_canon, t.head)),
    );
    triples.sort_unstable();
    triples.dedup();
    Ok(TripleSet {
        num_entities: set.num_entities,
        num_relations: 2 * r_canon,
        num_canonical_relations: r_canon,
        inverse_applied: true,
        triples,
    })
}

fn open(path: &Path) -> Result<BufReader<File>, GraphError> {
    File::open(path).map(BufReader::new).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_token(path: &Path, line: usize, tok: &str) -> Result<usize, GraphError> {
    tok.parse::<usize>().map_err(|_| GraphError::Parse {
        path: path.to_path_buf(),
        line,
        token: tok.to_string(),
    })
}

/// Result of parsing a CF file.
#[derive(Debug, Clone)]
pub struct CfLoad {
    pub set: InteractionSet,
    pub warnings: Vec<LoadWarning>,
}

/// Reads a CF file: one user per line, first token the user id, then item ids.
pub fn load_cf(path: &Path) -> Result<CfLoad, GraphError> {
    parse_cf(open(path)?, path)
}

pub fn parse_cf<R: BufRead>(reader: R, path: &Path) -> Result<CfLoad, GraphError> {
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        let user = parse_token(path, lineno, first)?;
        let items = tokens
            .map(|t| parse_token(path, lineno, t))
            .collect::<Result<Vec<_>, _>>()?;
        if items.is_empty() {
            warnings.push(LoadWarning::EmptyUser {
                user,
                line: lineno,
            });
        }
        match by_user.entry(user) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(items);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                warnings.push(LoadWarning::DuplicateUser {
                    user,
                    line: lineno,
                });
                e.get_mut().extend(items);
            }
        }
    }
    let num_users = by_user.keys().next_back().map_or(0, |u| u + 1);
    let mut positives = vec![Vec::new(); num_users];
    for (u, items) in by_user {
        positives[u] = items;
    }
    let mut set = InteractionSet::from_lists(0, positives);
    set.num_items = set.max_item_id().map_or(0, |m| m + 1);
    Ok(CfLoad { set, warnings })
}

#[derive(Debug, Clone)]
pub struct KgLoad {
    pub set: TripleSet,
    pub warnings: Vec<LoadWarning>,
}

/// Reads a KG file of canonical `head relation tail` lines.
pub fn load_kg(path: &Path) -> Result<KgLoad, GraphError> {
    parse_kg(open(path)?, path)
}

pub fn parse_kg<R: BufRead>(reader: R, path: &Path) -> Result<KgLoad, GraphError> {
    let mut triples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 3 {
            return Err(GraphError::TripleArity {
                path: path.to_path_buf(),
                line: lineno,
                found: tokens.len(),
            });
        }
        let h = parse_token(path, lineno, tokens[0])?;
        let r = parse_token(path, lineno, tokens[1])?;
        let t = parse_token(path, lineno, tokens[2])?;
        triples.push(Triple::new(h, r, t));
    }
    let raw = triples.len();
    let set = TripleSet::canonical(triples);
    let mut warnings = Vec::new();
    if set.len() < raw {
        warnings.push(LoadWarning::DuplicateTriples {
            count: raw - set.len(),
        });
    }
    let mut seen = vec![false; set.num_relations];
    for t in set.triples() {
        seen[t.relation] = true;
    }
    let missing: Vec<usize> = (0..set.num_relations).filter(|&r| !seen[r]).collect();
    if !missing.is_empty() {
        warnings.push(LoadWarning::RelationGap { missing });
    }
    Ok(KgLoad { set, warnings })
}

/// One `(relation, neighbor)` pair in an entity's adjacency list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Neighbor {
    pub relation: usize,
    pub entity: usize,
}

/// Immutable CSR adjacency for the user-item graph and the KG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphIndex {
    num_users: usize,
    num_items: usize,
    num_entities: usize,
    num_relations: usize,
    user_offsets: Vec<usize>,
    user_items: Vec<usize>,
    entity_offsets: Vec<usize>,
    entity_neighbors: Vec<Neighbor>,
}

/// Builds the adjacency index. Each entity's neighbors are sorted by
/// neighbor id, then relation id.
pub fn build_index(cf: &InteractionSet, kg: &TripleSet) -> Result<GraphIndex, GraphError> {
    if !kg.has_inverse() {
        return Err(GraphError::InverseMissing);
    }
    if let Some(max_item) = cf.max_item_id() {
        if max_item >= kg.num_entities {
            return Err(GraphError::ItemNotEntity {
                item: max_item,
                num_entities: kg.num_entities,
            });
        }
    }
    if cf.num_items > kg.num_entities {
        return Err(GraphError::ItemNotEntity {
            item: cf.num_items - 1,
            num_entities: kg.num_entities,
        });
    }

    let mut user_offsets = Vec::with_capacity(cf.num_users + 1);
    let mut user_items = Vec::with_capacity(cf.num_interactions());
    user_offsets.push(0);
    for items in &cf.positives {
        user_items.extend_from_slice(items);
        user_offsets.push(user_items.len());
    }

    let n = kg.num_entities;
    let mut lists: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
    for t in kg.triples() {
        lists[t.head].push(Neighbor {
            relation: t.relation,
            entity: t.tail,
        });
    }
    let mut entity_offsets = Vec::with_capacity(n + 1);
    let mut entity_neighbors = Vec::with_capacity(kg.len());
    entity_offsets.push(0);
    for mut list in lists {
        list.sort_unstable_by_key(|nb| (nb.entity, nb.relation));
        entity_neighbors.extend(list);
        entity_offsets.push(entity_neighbors.len());
    }

    Ok(GraphIndex {
        num_users: cf.num_users,
        num_items: cf.num_items,
        num_entities: n,
        num_relations: kg.num_relations,
        user_offsets,
        user_items,
        entity_offsets,
        entity_neighbors,
    })
}

const INDEX_MAGIC: &[u8; 8] = b"KGINGIDX";
const INDEX_VERSION: u32 = 1;

impl GraphIndex {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn user_items(&self, u: usize) -> &[usize] {
        &self.user_items[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_offsets[u + 1] - self.user_offsets[u]
    }

    pub fn entity_neighbors(&self, v: usize) -> &[Neighbor] {
        &self.entity_neighbors[self.entity_offsets[v]..self.entity_offsets[v + 1]]
    }

    pub fn entity_degree(&self, v: usize) -> usize {
        self.entity_offsets[v + 1] - self.entity_offsets[v]
    }

    pub fn num_kg_edges(&self) -> usize {
        self.entity_neighbors.len()
    }

    pub fn num_user_edges(&self) -> usize {
        self.user_items.len()
    }

    /// KG edges flattened as parallel `(head, relation, tail)` arrays in index order.
    pub fn kg_edge_arrays(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut heads = Vec::with_capacity(self.num_kg_edges());
        let mut rels = Vec::with_capacity(self.num_kg_edges());
        let mut tails = Vec::with_capacity(self.num_kg_edges());
        for v in 0..self.num_entities {
            for nb in self.entity_neighbors(v) {
                heads.push(v);
                rels.push(nb.relation);
                tails.push(nb.entity);
            }
        }
        (heads, rels, tails)
    }

    /// Serializes the index.
    ///
    /// Layout (all integers little-endian):
    ///
    /// ```text
    /// magic "KGINGIDX" | version u32
    /// num_users u64 | num_items u64 | num_entities u64 | num_relations u64
    /// num_user_edges u64 | user_offsets (num_users+1) x u64 | user_items x u64
    /// num_kg_edges u64 | entity_offsets (num_entities+1) x u64 | (relation u64, entity u64) x num_kg_edges
    /// ```
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        binio::write_u32(w, INDEX_VERSION)?;
        for n in [
            self.num_users,
            self.num_items,
            self.num_entities,
            self.num_relations,
        ] {
            binio::write_u64(w, n as u64)?;
        }
        binio::write_u64(w, self.user_items.len() as u64)?;
        for &o in &self.user_offsets {
            binio::write_u64(w, o as u64)?;
        }
        for &i in &self.user_items {
            binio::write_u64(w, i as u64)?;
        }
        binio::write_u64(w, self.entity_neighbors.len() as u64)?;
        for &o in &self.entity_offsets {
            binio::write_u64(w, o as u64)?;
        }
        for nb in &self.entity_neighbors {
            binio::write_u64(w, nb.relation as u64)?;
            binio::write_u64(w, nb.entity as u64)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, GraphError> {
        let ck = |e: io::Error| GraphError::Checkpoint(e.to_string());
        binio::read_magic(r, INDEX_MAGIC).map_err(ck)?;
        let version = binio::read_u32(r).map_err(ck)?;
        if version != INDEX_VERSION {
            return Err(GraphError::Checkpoint(format!(
                "unsupported index version {version}"
            )));
        }
        let mut rd = || binio::read_u64(r).map(|v| v as usize).map_err(ck);
        let num_users = rd()?;
        let num_items = rd()?;
        let num_entities = rd()?;
        let num_relations = rd()?;
        let n_user_edges = rd()?;
        let user_offsets = (0..=num_users).map(|_| rd()).collect::<Result<Vec<_>, _>>()?;
        let user_items = (0..n_user_edges).map(|_| rd()).collect::<Result<Vec<_>, _>>()?;
        let n_kg_edges = rd()?;
        let entity_offsets = (0..=num_entities)
            .map(|_| rd())
            .collect::<Result<Vec<_>, _>>()?;
        let mut entity_neighbors = Vec::with_capacity(n_kg_edges);
        for _ in 0..n_kg_edges {
            let relation = rd()?;
            let entity = rd()?;
            entity_neighbors.push(Neighbor { relation, entity });
        }
        let index = GraphIndex {
            num_users,
            num_items,
            num_entities,
            num_relations,
            user_offsets,
            user_items,
            entity_offsets,
            entity_neighbors,
        };
        index.validate()?;
        Ok(index)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::Checkpoint(m.to_string()));
        if self.user_offsets.last() != Some(&self.user_items.len())
            || self.entity_offsets.last() != Some(&self.entity_neighbors.len())
        {
            return bad("offsets do not cover adjacency arrays");
        }
        if self.user_offsets.windows(2).any(|w| w[0] > w[1])
            || self.entity_offsets.windows(2).any(|w| w[0] > w[1])
        {
            return bad("offsets are not monotone");
        }
        if self.user_items.iter().any(|&i| i >= self.num_items) {
            return bad("user item id out of range");
        }
        if self
            .entity_neighbors
            .iter()
            .any(|nb| nb.entity >= self.num_entities || nb.relation >= self.num_relations)
        {
            return bad("neighbor id out of range");
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let io_err = |source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_to(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let mut r = open(path)?;
        Self::read_from(&mut r)
    }
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// every remaining user and item has at least `k`. Ids are not remapped.
pub fn k_core_filter(cf: &InteractionSet, k: usize) -> InteractionSet {
    let mut lists = cf.positives.clone();
    loop {
        let mut item_deg = vec![0usize; cf.num_items];
        for items in &lists {
            for &i in items {
                item_deg[i] += 1;
            }
        }
        let mut changed = false;
        for items in &mut lists {
            let before = items.len();
            items.retain(|&i| item_deg[i] >= k);
            if items.len() < k && !items.is_empty() {
                items.clear();
            }
            changed |= items.len() != before;
        }
        if !changed {
            break;
        }
    }
    InteractionSet {
        num_users: cf.num_users,
        num_items: cf.num_items,
        positives: lists,
    }
}

/// Dataset statistics in the shape of a dataset summary table.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub entities: usize,
    pub canonical_relations: usize,
    pub relations_with_inverse: usize,
    pub canonical_triplets: usize,
}

/// A loaded dataset directory: `train.txt`, optional `test.txt`, `kg_final.txt`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: InteractionSet,
    pub test: Option<InteractionSet>,
    /// KG with inverse relations applied.
    pub kg: TripleSet,
    pub index: GraphIndex,
    pub warnings: Vec<LoadWarning>,
}

pub const TRAIN_FILE: &str = "train.txt";
pub const TEST_FILE: &str = "test.txt";
pub const KG_FILE: &str = "kg_final.txt";

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, GraphError> {
        let train = load_cf(&dir.join(TRAIN_FILE))?;
        let test_path = dir.join(TEST_FILE);
        let test = if test_path.exists() {
            Some(load_cf(&test_path)?)
        } else {
            None
        };
        let kg = load_kg(&dir.join(KG_FILE))?;
        let mut warnings = train.warnings;
        warnings.extend(kg.warnings);
        let (train, test) = match test {
            Some(t) => {
                warnings.extend(t.warnings);
                (train.set, Some(t.set))
            }
            None => (train.set, None),
        };
        Self::from_parts(train, test, kg.set, warnings)
    }

    /// Aligns user/item counts across splits, inverts the KG and builds the index.
    pub fn from_parts(
        train: InteractionSet,
        test: Option<InteractionSet>,
        canonical_kg: TripleSet,
        warnings: Vec<LoadWarning>,
    ) -> Result<Self, GraphError> {
        let num_items = train
            .num_items
            .max(test.as_ref().map_or(0, |t| t.num_items));
        let num_users = train
            .num_users
            .max(test.as_ref().map_or(0, |t| t.num_users));
        let train = train.with_num_items(num_items)?.with_num_users(num_users);
        let test = test
            .map(|t| t.with_num_items(num_items).map(|t| t.with_num_users(num_users)))
            .transpose()?;
        let kg = add_inverse_relations(&canonical_kg.with_min_entities(num_items))?;
        let index = build_index(&train, &kg)?;
        Ok(Self {
            train,
            test,
            kg,
            index,
            warnings,
        })
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.train.num_users,
            items: self.train.num_items,
            interactions: self.train.num_interactions()
                + self.test.as_ref().map_or(0, InteractionSet::num_interactions),
            entities: self.kg.num_entities,
            canonical_relations: self.kg.num_canonical_relations,
            relations_with_inverse: self.kg.num_relations,
            canonical_triplets: self.kg.num_canonical_triples(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), GraphError> {
        std::fs::create_dir_all(dir).map_err(|source| GraphError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        self.train.save(&dir.join(TRAIN_FILE))?;
        if let Some(test) = &self.test {
            test.save(&dir.join(TEST_FILE))?;
        }
        let path = dir.join(KG_FILE);
        let io_err = |source| GraphError::Io {
            path: path.clone(),
            source,
        };
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        for t in self.kg.triples() {
            if t.relation < self.kg.num_canonical_relations {
                writeln!(w, "{} {} {}", t.head, t.relation, t.tail).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }
}
