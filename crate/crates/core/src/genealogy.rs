//! Ancestry recording and backward lineage tracing.
//!
//! Births and mutations append nodes to an append-only table; each living
//! individual points at its latest node. A lineage is the parent chain from
//! a node back to a root. The ancestor of a sample at forward time `t` is
//! the most recent node on its lineage with time `<= t` (lineage state is
//! left-continuous: a node taking effect exactly at `t` counts).
//!
//! Periodic simplification retains exactly the ancestors of living and
//! pinned nodes, keeping memory proportional to the live genealogy instead
//! of the event count. All lineage queries answer identically before and
//! after simplification.

use crate::coalescent::{bs_exact_fdd, Partition};
use crate::error::{Error, Result};
use crate::popsim::{EventHooks, EventRecord, PopulationState};
use crate::rng::StreamRng;
use rand::seq::index::sample as index_sample;
use rand::Rng;

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Root,
    Birth,
    Mutation,
}

/// Append-only node table plus the living and pinned maps.
#[derive(Debug, Clone)]
pub struct AncestryStore {
    parent: Vec<u32>,
    time: Vec<f64>,
    node_type: Vec<u32>,
    kind: Vec<NodeKind>,
    /// slot -> current node of the individual occupying the slot.
    living: Vec<u32>,
    /// Pinned sample nodes (never pruned), with the pinning time.
    pinned: Vec<u32>,
    pinned_time: f64,
}

impl AncestryStore {
    /// A fresh store with one root node per individual, all of `root_type`
    /// at time 0.
    pub fn init(n: usize, root_type: u32) -> Self {
        AncestryStore {
            parent: vec![NO_PARENT; n],
            time: vec![0.0; n],
            node_type: vec![root_type; n],
            kind: vec![NodeKind::Root; n],
            living: (0..n as u32).collect(),
            pinned: Vec::new(),
            pinned_time: f64::NAN,
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn node_time(&self, node: u32) -> f64 {
        self.time[node as usize]
    }

    pub fn node_kind(&self, node: u32) -> NodeKind {
        self.kind[node as usize]
    }

    pub fn node_type(&self, node: u32) -> u32 {
        self.node_type[node as usize]
    }

    pub fn node_parent(&self, node: u32) -> Option<u32> {
        let p = self.parent[node as usize];
        (p != NO_PARENT).then_some(p)
    }

    pub fn living_node(&self, slot: u32) -> u32 {
        self.living[slot as usize]
    }

    fn push(&mut self, parent: u32, t: f64, node_type: u32, kind: NodeKind) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(parent);
        self.time.push(t);
        self.node_type.push(node_type);
        self.kind.push(kind);
        id
    }

    /// Record a birth: the child (occupying `child_slot`) hangs off the
    /// parent's current node and inherits its type.
    pub fn record_birth(&mut self, parent_slot: u32, child_slot: u32, t: f64) -> u32 {
        let pnode = self.living[parent_slot as usize];
        let node = self.push(pnode, t, self.node_type[pnode as usize], NodeKind::Birth);
        self.living[child_slot as usize] = node;
        node
    }

    /// Record a mutation: the individual's chain extends with a node of the
    /// incremented type.
    pub fn record_mutation(&mut self, slot: u32, t: f64) -> u32 {
        let cur = self.living[slot as usize];
        let node = self.push(cur, t, self.node_type[cur as usize] + 1, NodeKind::Mutation);
        self.living[slot as usize] = node;
        node
    }

    /// Pin `n` individuals sampled uniformly without replacement at the
    /// current state. Pinned nodes survive simplification; samples are
    /// addressed by their pin order thereafter.
    pub fn pin_samples(
        &mut self,
        state: &PopulationState,
        n: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<u32>> {
        if n > state.n() {
            return Err(Error::Argument(format!(
                "cannot sample {n} from population of {}",
                state.n()
            )));
        }
        let slots = index_sample(rng, state.n(), n);
        let nodes: Vec<u32> = slots.iter().map(|s| self.living[s]).collect();
        self.pinned = nodes.clone();
        self.pinned_time = state.t();
        Ok(nodes)
    }

    pub fn pinned(&self) -> &[u32] {
        &self.pinned
    }

    pub fn pinned_time(&self) -> f64 {
        self.pinned_time
    }

    /// Drop every node that is not an ancestor of a living or pinned node.
    /// Node ids are remapped internally; `living` and `pinned` stay valid.
    pub fn simplify(&mut self) {
        let len = self.parent.len();
        let mut keep = vec![false; len];
        let mark = |start: u32, keep: &mut Vec<bool>| {
            let mut cur = start;
            loop {
                if std::mem::replace(&mut keep[cur as usize], true) {
                    break;
                }
                match self.parent[cur as usize] {
                    NO_PARENT => break,
                    p => cur = p,
                }
            }
        };
        for &node in self.living.iter().chain(self.pinned.iter()) {
            mark(node, &mut keep);
        }
        let mut idmap = vec![NO_PARENT; len];
        let mut next = 0u32;
        for (old, &k) in keep.iter().enumerate() {
            if k {
                idmap[old] = next;
                next += 1;
            }
        }
        let remap = |v: u32| idmap[v as usize];
        for old in 0..len {
            if keep[old] {
                let new = idmap[old] as usize;
                self.parent[new] = match self.parent[old] {
                    NO_PARENT => NO_PARENT,
                    p => remap(p),
                };
                self.time[new] = self.time[old];
                self.node_type[new] = self.node_type[old];
                self.kind[new] = self.kind[old];
            }
        }
        let new_len = next as usize;
        self.parent.truncate(new_len);
        self.time.truncate(new_len);
        self.node_type.truncate(new_len);
        self.kind.truncate(new_len);
        for v in self.living.iter_mut().chain(self.pinned.iter_mut()) {
            *v = remap(*v);
        }
    }

    /// The node occupying the lineage of `node` at forward time `t`.
    pub fn ancestor_at(&self, node: u32, t: f64) -> Result<u32> {
        if t < 0.0 {
            return Err(Error::Argument(format!("time {t} precedes the root era")));
        }
        let mut cur = node;
        while self.time[cur as usize] > t {
            match self.parent[cur as usize] {
                NO_PARENT => break,
                p => cur = p,
            }
        }
        Ok(cur)
    }

    /// Root-first node chain of a lineage.
    pub fn chain(&self, node: u32) -> Vec<u32> {
        let mut out = vec![node];
        let mut cur = node;
        while let Some(p) = self.node_parent(cur) {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }
}

/// Ancestry recording as an event hook, with periodic simplification.
pub struct AncestryHook {
    pub store: AncestryStore,
    simplify_interval: u64,
    since_simplify: u64,
}

impl AncestryHook {
    pub fn new(n: usize, simplify_interval: u64) -> Self {
        AncestryHook {
            store: AncestryStore::init(n, 0),
            simplify_interval: if simplify_interval == 0 { n as u64 } else { simplify_interval },
            since_simplify: 0,
        }
    }
}

impl EventHooks for AncestryHook {
    fn after_event(&mut self, _state: &PopulationState, ev: &EventRecord) {
        match *ev {
            EventRecord::DeathBirth { time, victim_slot, parent_slot, .. } => {
                self.store.record_birth(parent_slot, victim_slot, time);
            }
            EventRecord::Mutation { time, slot, .. } => {
                self.store.record_mutation(slot, time);
            }
        }
        self.since_simplify += 1;
        if self.since_simplify >= self.simplify_interval {
            self.store.simplify();
            self.since_simplify = 0;
        }
    }
}

/// Lineage data of a pinned sample: per-lineage mutation times, per-lineage
/// ancestor types, and the pairwise coalescence-time matrix.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub n: usize,
    pub sampling_time: f64,
    /// `coalescence[i][j]`: forward time of the last common ancestor of
    /// samples i and j; `-inf` when the lineages never meet;
    /// `sampling_time` on the diagonal.
    pub coalescence: Vec<Vec<f64>>,
    /// `mutation_times[i][k]`: forward time of the (k+1)-th mutation on
    /// lineage i, strictly increasing.
    pub mutation_times: Vec<Vec<f64>>,
}

impl SampleTrace {
    /// Partition of the samples by common ancestry at forward time `t`.
    /// Thresholding the ultrametric coalescence matrix is transitive, so
    /// the blocks are well defined.
    pub fn partition_at_forward(&self, t: f64) -> Partition {
        let mut labels = vec![0u32; self.n];
        let mut next = 0u32;
        let mut assigned = vec![false; self.n];
        for i in 0..self.n {
            if assigned[i] {
                continue;
            }
            let lab = next;
            next += 1;
            labels[i] = lab;
            assigned[i] = true;
            for j in (i + 1)..self.n {
                if !assigned[j] && self.coalescence[i][j] > t {
                    labels[j] = lab;
                    assigned[j] = true;
                }
            }
        }
        Partition::from_labels(&labels)
    }

    /// Partition at backward time `u_back` before the sampling time
    /// (raw model-time units).
    pub fn partition_at_backward(&self, u_back: f64) -> Result<Partition> {
        let t = self.sampling_time - u_back;
        if t < 0.0 {
            return Err(Error::Argument(format!(
                "backward time {u_back} reaches past the start of the run"
            )));
        }
        Ok(self.partition_at_forward(t))
    }
}

/// Partition of the pinned samples by common ancestry at backward time
/// `u_back` (raw model-time units before the sampling time).
pub fn trace_partition(store: &AncestryStore, u_back: f64) -> Result<Partition> {
    let t = store.pinned_time() - u_back;
    if t < 0.0 {
        return Err(Error::Argument(format!(
            "backward time {u_back} reaches past the start of the run"
        )));
    }
    partition_at_forward_time(store, t)
}

fn partition_at_forward_time(store: &AncestryStore, t: f64) -> Result<Partition> {
    let pins = store.pinned();
    let mut reps = Vec::with_capacity(pins.len());
    for &node in pins {
        reps.push(store.ancestor_at(node, t)?);
    }
    let mut labels = vec![0u32; reps.len()];
    let mut seen: Vec<u32> = Vec::new();
    for (i, r) in reps.iter().enumerate() {
        labels[i] = match seen.iter().position(|x| x == r) {
            Some(k) => k as u32,
            None => {
                seen.push(*r);
                seen.len() as u32 - 1
            }
        };
    }
    Ok(Partition::from_labels(&labels))
}

/// Extract lineage times for the pinned samples.
pub fn extract_times(store: &AncestryStore) -> SampleTrace {
    let pins = store.pinned();
    let n = pins.len();
    let chains: Vec<Vec<u32>> = pins.iter().map(|&p| store.chain(p)).collect();
    let mut coal = vec![vec![f64::NEG_INFINITY; n]; n];
    for i in 0..n {
        coal[i][i] = store.pinned_time();
        for j in (i + 1)..n {
            let (a, b) = (&chains[i], &chains[j]);
            let mut k = 0;
            while k < a.len() && k < b.len() && a[k] == b[k] {
                k += 1;
            }
            let t = if k == 0 {
                // distinct roots: the lineages never share an ancestor
                f64::NEG_INFINITY
            } else {
                // divergence happens at the first post-split node time
                let ta = a.get(k).map(|&x| store.node_time(x)).unwrap_or(f64::INFINITY);
                let tb = b.get(k).map(|&x| store.node_time(x)).unwrap_or(f64::INFINITY);
                ta.min(tb)
            };
            coal[i][j] = t;
            coal[j][i] = t;
        }
    }
    let mutation_times = chains
        .iter()
        .map(|chain| {
            chain
                .iter()
                .filter(|&&node| store.node_kind(node) == NodeKind::Mutation)
                .map(|&node| store.node_time(node))
                .collect()
        })
        .collect();
    SampleTrace {
        n,
        sampling_time: store.pinned_time(),
        coalescence: coal,
        mutation_times,
    }
}

/// Type of the ancestor of pinned sample `i` at forward time `t`.
pub fn ancestor_type(store: &AncestryStore, i: usize, t: f64) -> Result<u32> {
    let node = store.ancestor_at(store.pinned()[i], t)?;
    Ok(store.node_type(node))
}

/// Outcome of comparing traced partitions against the exact coalescent law.
#[derive(Debug, Clone)]
pub struct FddComparison {
    /// Backward times in `a_N` units (theorem convention, shifted).
    pub times: Vec<f64>,
    pub tv_distance: Vec<f64>,
    pub tv_ci: Vec<(f64, f64)>,
    /// Probability that no lineages have met by backward time `a_N`.
    pub singleton_prob: f64,
    pub replicates: usize,
    pub warnings: Vec<String>,
}

/// Compare the empirical law of the traced partitions against the exact
/// coalescent law.
///
/// `times` are backward times in units of `a_N`, already shifted by the
/// unit burn-in: a value `v` means the partition by ancestry at backward
/// time `a_N v`, which the limit theory matches with the exact coalescent
/// run for time `v - 1`. Confidence intervals are percentile bootstrap over
/// replicates.
pub fn fdd_compare(
    traces: &[SampleTrace],
    n: usize,
    times: &[f64],
    a_n: f64,
    rng: &mut StreamRng,
) -> Result<FddComparison> {
    if times.iter().any(|&v| v < 1.0) {
        return Err(Error::Argument(
            "shifted backward times must be >= 1 (one a_N of burn-in)".into(),
        ));
    }
    let mut warnings = Vec::new();
    if traces.len() < 100 {
        warnings.push(format!(
            "only {} replicates; distribution estimates are unreliable",
            traces.len()
        ));
    }
    let reference = bs_exact_fdd(n, &times.iter().map(|v| v - 1.0).collect::<Vec<_>>())?;
    let m = reference.states.len();
    let index_of = |p: &Partition| -> usize {
        reference.states.iter().position(|s| s == p).expect("partition in state space")
    };

    let mut tv_distance = Vec::with_capacity(times.len());
    let mut tv_ci = Vec::with_capacity(times.len());
    for (k, &v) in times.iter().enumerate() {
        let mut obs: Vec<usize> = Vec::with_capacity(traces.len());
        for tr in traces {
            let p = tr.partition_at_backward(a_n * v)?;
            obs.push(index_of(&p));
        }
        let tv = tv_from_obs(&obs, m, &reference.probabilities[k]);
        tv_distance.push(tv);
        let boots = 1000;
        let mut tvs = Vec::with_capacity(boots);
        for _ in 0..boots {
            let resampled: Vec<usize> =
                (0..obs.len()).map(|_| obs[rng.random_range(0..obs.len())]).collect();
            tvs.push(tv_from_obs(&resampled, m, &reference.probabilities[k]));
        }
        tvs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        tv_ci.push((tvs[(boots as f64 * 0.025) as usize], tvs[(boots as f64 * 0.975) as usize]));
    }

    let mut singles = 0usize;
    for tr in traces {
        if tr.partition_at_backward(a_n)?.is_singletons() {
            singles += 1;
        }
    }

    Ok(FddComparison {
        times: times.to_vec(),
        tv_distance,
        tv_ci,
        singleton_prob: singles as f64 / traces.len() as f64,
        replicates: traces.len(),
        warnings,
    })
}

fn tv_from_obs(obs: &[usize], m: usize, reference: &[f64]) -> f64 {
    let mut counts = vec![0u64; m];
    for &o in obs {
        counts[o] += 1;
    }
    0.5 * counts
        .iter()
        .zip(reference.iter())
        .map(|(&c, &p)| (c as f64 / obs.len() as f64 - p).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built table: 5 explicit nodes.
    ///
    /// ```text
    /// root a (t=0) -- birth b (t=1.0, child of a) -- mutation c (t=2.0 on b's line)
    ///             \-- birth d (t=1.5, child of a)
    /// root e (t=0)
    /// ```
    fn hand_store() -> AncestryStore {
        let mut st = AncestryStore::init(3, 0);
        // slots: 0 holds a's line, 1 holds d eventually, 2 holds e.
        st.record_birth(0, 1, 1.0); // b: child of a in slot 1
        st.record_mutation(1, 2.0); // c: mutation on b's line
        st.record_birth(0, 0, 1.5); // d: child of a replacing slot 0
        st
    }

    #[test]
    fn hand_traced_partitions() {
        let mut st = hand_store();
        st.pinned = vec![st.living[1], st.living[0], st.living[2]];
        st.pinned_time = 3.0;

        // At t in [1.5, 3]: b-line and d are distinct; e separate.
        let p = partition_at_forward_time(&st, 2.5).unwrap();
        assert_eq!(p.to_string(), "1|2|3");
        // At t in [0, 1.0): both lineages sit on root a.
        let p = partition_at_forward_time(&st, 0.5).unwrap();
        assert_eq!(p.to_string(), "1,2|3");
        // Divergence happened at d's birth (1.5): at t=1.2, b exists (1.0),
        // d's line is still on a.
        let p = partition_at_forward_time(&st, 1.2).unwrap();
        assert_eq!(p.to_string(), "1|2|3");

        let trace = extract_times(&st);
        assert_eq!(trace.coalescence[0][1], 1.0); // split at b's birth
        assert!(trace.coalescence[0][2].is_infinite() && trace.coalescence[0][2] < 0.0);
        assert_eq!(trace.coalescence[0][0], 3.0);
        assert_eq!(trace.mutation_times[0], vec![2.0]);
        assert!(trace.mutation_times[1].is_empty());
    }

    #[test]
    fn backward_zero_is_singletons() {
        let mut st = hand_store();
        st.pinned = vec![st.living[0], st.living[1], st.living[2]];
        st.pinned_time = 3.0;
        assert!(trace_partition(&st, 0.0).unwrap().is_singletons());
        assert!(trace_partition(&st, 4.0).is_err());
    }

    #[test]
    fn parent_child_copies_merge_immediately() {
        let mut st = AncestryStore::init(2, 0);
        st.record_birth(0, 1, 2.0); // slot 1 is a fresh copy of slot 0
        st.pinned = vec![st.living[0], st.living[1]];
        st.pinned_time = 5.0;
        for u in [0.0, 1.0, 2.9] {
            assert!(trace_partition(&st, u).unwrap().is_singletons());
        }
        // strictly before the copy time they share the ancestor
        assert_eq!(trace_partition(&st, 3.5).unwrap().num_blocks(), 1);
        let tr = extract_times(&st);
        assert_eq!(tr.coalescence[0][1], 2.0);
    }

    #[test]
    fn mutation_does_not_split_lineages() {
        // A mutation node on one branch must not affect coalescence times.
        let mut st = AncestryStore::init(2, 0);
        st.record_mutation(0, 0.5);
        st.record_birth(0, 1, 1.0);
        st.record_mutation(1, 2.0);
        st.pinned = vec![st.living[0], st.living[1]];
        st.pinned_time = 3.0;
        let tr = extract_times(&st);
        assert_eq!(tr.coalescence[0][1], 1.0);
        assert_eq!(tr.mutation_times[0], vec![0.5]);
        assert_eq!(tr.mutation_times[1], vec![0.5, 2.0]);
        assert_eq!(ancestor_type(&st, 1, 2.5).unwrap(), 2);
        assert_eq!(ancestor_type(&st, 1, 1.5).unwrap(), 1);
    }

    #[test]
    fn simplify_preserves_queries_and_drops_garbage() {
        let mut st = AncestryStore::init(4, 0);
        // Grow some structure, then kill lines by overwriting slots.
        st.record_birth(0, 1, 1.0);
        st.record_mutation(1, 1.5);
        st.record_birth(1, 2, 2.0);
        st.record_birth(3, 1, 2.5); // old line of slot 1 becomes garbage above node time 1.0
        st.pinned = vec![st.living[0], st.living[1], st.living[2], st.living[3]];
        st.pinned_time = 3.0;

        let before: Vec<Partition> = (0..6)
            .map(|k| trace_partition(&st, k as f64 * 0.5).unwrap())
            .collect();
        let tr_before = extract_times(&st);
        let len_before = st.len();
        st.simplify();
        assert!(st.len() <= len_before);
        let after: Vec<Partition> = (0..6)
            .map(|k| trace_partition(&st, k as f64 * 0.5).unwrap())
            .collect();
        assert_eq!(before, after);
        let tr_after = extract_times(&st);
        assert_eq!(tr_before.coalescence, tr_after.coalescence);
        assert_eq!(tr_before.mutation_times, tr_after.mutation_times);
    }

    #[test]
    fn simplify_is_noop_when_everything_lives() {
        let mut st = AncestryStore::init(3, 0);
        st.record_birth(0, 1, 1.0);
        let len = st.len();
        st.simplify();
        assert_eq!(st.len(), len);
    }
}
