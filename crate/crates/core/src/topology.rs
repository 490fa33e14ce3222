//! Optical distribution network: a CO, one level-2 splitter, level-1
//! splitters with optional east-west cross-links, and leaf sites (ONUs and
//! edge OLTs). Level-1 splitters carry reconfigurable wavelength rule sets
//! that decide where each channel goes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Nanos;
use crate::wavelength::ChannelId;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` ({role}) has no valid parent: {reason}")]
    BadParent {
        node: String,
        role: NodeRole,
        reason: String,
    },
    #[error("xlink `{a}`-`{b}` must join two distinct level-1 splitters")]
    BadXlink { a: String, b: String },
    #[error("topology must contain exactly one CO, found {0}")]
    CoCount(usize),
    #[error("negative or non-finite length {length_km} km on `{node}`")]
    BadLength { node: String, length_km: f64 },
    #[error("drop of {length_km} km at `{node}` exceeds bound of {bound_km} km")]
    DropTooLong {
        node: String,
        length_km: f64,
        bound_km: f64,
    },
    #[error("`{0}` is not a level-1 splitter")]
    NotLevel1(String),
    #[error("rule conflict at `{splitter}`: {channel} in both {first} and {second}")]
    RuleConflict {
        splitter: String,
        channel: ChannelId,
        first: &'static str,
        second: &'static str,
    },
    #[error("path endpoints must differ")]
    SameEndpoints,
    #[error("`{0}` cannot terminate a path")]
    BadEndpoint(String),
    #[error("no path from `{src}` to `{dst}` on {channel}")]
    NoPath {
        src: String,
        dst: String,
        channel: ChannelId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    Co,
    Level2Splitter,
    Level1Splitter,
    EdgeOltSite,
    OnuSite,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeRole::Co => "co",
            NodeRole::Level2Splitter => "level2-splitter",
            NodeRole::Level1Splitter => "level1-splitter",
            NodeRole::EdgeOltSite => "edge-olt-site",
            NodeRole::OnuSite => "onu-site",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortClass {
    Lower,
    Trunk,
    Xlink,
    Loopback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Feeder,
    Distribution,
    Drop,
    Xlink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub role: NodeRole,
}

/// Bidirectional fiber. Lengths are kept in whole metres.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberLink {
    pub a: (NodeId, PortClass),
    pub b: (NodeId, PortClass),
    pub length_m: u64,
    pub kind: LinkKind,
}

impl FiberLink {
    pub fn length_km(&self) -> f64 {
        self.length_m as f64 / 1000.0
    }

    fn other(&self, from: NodeId) -> (NodeId, PortClass) {
        if self.a.0 == from {
            self.b
        } else {
            self.a
        }
    }

    fn port_at(&self, node: NodeId) -> PortClass {
        if self.a.0 == node {
            self.a.1
        } else {
            self.b.1
        }
    }
}

/// Wavelength rules of one level-1 splitter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitterRuleSet {
    /// Looped back from the splitter body to every lower port (WLB).
    pub reflect: BTreeSet<ChannelId>,
    /// Passed between the cross-link and the splitter body (WPF2).
    pub xpass: BTreeSet<ChannelId>,
    /// Passed between the trunk and the splitter body (WPF1).
    pub trunkpass: BTreeSet<ChannelId>,
}

impl SplitterRuleSet {
    /// Sets must be pairwise disjoint so that a channel entering from a
    /// lower port leaves through at most one block.
    fn validate(&self, splitter: &str) -> Result<(), TopologyError> {
        let pairs: [(
            &BTreeSet<ChannelId>,
            &'static str,
            &BTreeSet<ChannelId>,
            &'static str,
        ); 3] = [
            (&self.reflect, "reflect", &self.trunkpass, "trunkpass"),
            (&self.reflect, "reflect", &self.xpass, "xpass"),
            (&self.xpass, "xpass", &self.trunkpass, "trunkpass"),
        ];
        for (a, an, b, bn) in pairs {
            if let Some(ch) = a.intersection(b).next() {
                return Err(TopologyError::RuleConflict {
                    splitter: splitter.to_owned(),
                    channel: *ch,
                    first: an,
                    second: bn,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EastWestMode {
    #[default]
    Direct,
    Overlay,
}

impl fmt::Display for EastWestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EastWestMode::Direct => "direct",
            EastWestMode::Overlay => "overlay",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropPolicy {
    #[default]
    Accept,
    Warn,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub role: NodeRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Length of the fiber to the parent; role default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XlinkConfig {
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub splitter: String,
    #[serde(default)]
    pub reflect: Vec<u16>,
    #[serde(default)]
    pub xpass: Vec<u16>,
    #[serde(default)]
    pub trunkpass: Vec<u16>,
}

fn d_feeder() -> f64 {
    40.0
}
fn d_distribution() -> f64 {
    10.0
}
fn d_drop() -> f64 {
    0.3
}
fn d_direct() -> f64 {
    1.0
}
fn d_max_drop() -> f64 {
    0.5
}
fn d_prop() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default)]
    pub east_west_mode: EastWestMode,
    #[serde(default = "d_feeder")]
    pub feeder_km: f64,
    #[serde(default = "d_distribution")]
    pub distribution_km: f64,
    #[serde(default = "d_drop")]
    pub drop_km: f64,
    #[serde(default = "d_direct")]
    pub direct_km: f64,
    #[serde(default = "d_max_drop")]
    pub max_drop_km: f64,
    #[serde(default)]
    pub drop_policy: DropPolicy,
    #[serde(default = "d_prop")]
    pub propagation_us_per_km: f64,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub xlinks: Vec<XlinkConfig>,
    #[serde(default)]
    pub rules: Vec<RuleConfig>,
}

impl TopologyConfig {
    pub fn new(nodes: Vec<NodeConfig>) -> Self {
        Self {
            east_west_mode: EastWestMode::Direct,
            feeder_km: d_feeder(),
            distribution_km: d_distribution(),
            drop_km: d_drop(),
            direct_km: d_direct(),
            max_drop_km: d_max_drop(),
            drop_policy: DropPolicy::Accept,
            propagation_us_per_km: d_prop(),
            nodes,
            xlinks: Vec::new(),
            rules: Vec::new(),
        }
    }
}

/// One traversed fiber segment. Overlay east-west hops appear as two
/// segments through the level-2 splitter site.
#[derive(Debug, Clone, PartialEq)]
pub struct PathHop {
    pub from: NodeId,
    pub to: NodeId,
    pub link: usize,
    pub length_m: u64,
    pub overlay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub hops: Vec<PathHop>,
    pub total_length_m: u64,
}

impl Path {
    pub fn total_length_km(&self) -> f64 {
        self.total_length_m as f64 / 1000.0
    }

    pub fn reversed(&self) -> Path {
        let hops = self
            .hops
            .iter()
            .rev()
            .map(|h| PathHop {
                from: h.to,
                to: h.from,
                ..h.clone()
            })
            .collect();
        Path {
            hops,
            total_length_m: self.total_length_m,
        }
    }
}

fn km_to_m(node: &str, km: f64) -> Result<u64, TopologyError> {
    if !km.is_finite() || km < 0.0 {
        return Err(TopologyError::BadLength {
            node: node.to_owned(),
            length_km: km,
        });
    }
    Ok((km * 1000.0).round() as u64)
}

#[derive(Debug, Clone)]
pub struct OdnTopology {
    nodes: Vec<Node>,
    index: HashMap<String, NodeId>,
    links: Vec<FiberLink>,
    adjacency: Vec<Vec<usize>>,
    parent_link: Vec<Option<usize>>,
    rules: BTreeMap<NodeId, SplitterRuleSet>,
    mode: EastWestMode,
    propagation_ns_per_m: f64,
    warnings: Vec<String>,
}

impl OdnTopology {
    /// Builds and validates a topology. Link lengths default by role when
    /// the node does not give one.
    pub fn build(cfg: &TopologyConfig) -> Result<Self, TopologyError> {
        let mut nodes = Vec::with_capacity(cfg.nodes.len());
        let mut index = HashMap::new();
        for n in &cfg.nodes {
            let id = NodeId(nodes.len() as u32);
            if index.insert(n.id.clone(), id).is_some() {
                return Err(TopologyError::DuplicateNode(n.id.clone()));
            }
            nodes.push(Node {
                name: n.id.clone(),
                role: n.role,
            });
        }
        let co_count = nodes.iter().filter(|n| n.role == NodeRole::Co).count();
        if co_count != 1 {
            return Err(TopologyError::CoCount(co_count));
        }

        let mut topo = OdnTopology {
            adjacency: vec![Vec::new(); nodes.len()],
            parent_link: vec![None; nodes.len()],
            nodes,
            index,
            links: Vec::new(),
            rules: BTreeMap::new(),
            mode: cfg.east_west_mode,
            propagation_ns_per_m: cfg.propagation_us_per_km,
            warnings: Vec::new(),
        };
        if !cfg.propagation_us_per_km.is_finite() || cfg.propagation_us_per_km < 0.0 {
            return Err(TopologyError::BadLength {
                node: "propagation_us_per_km".into(),
                length_km: cfg.propagation_us_per_km,
            });
        }

        for n in &cfg.nodes {
            let id = topo.index[&n.id];
            let (want_parent, kind, default_km, own_port, parent_port) = match n.role {
                NodeRole::Co => {
                    if n.parent.is_some() {
                        return Err(TopologyError::BadParent {
                            node: n.id.clone(),
                            role: n.role,
                            reason: "the CO is the root".into(),
                        });
                    }
                    continue;
                }
                NodeRole::Level2Splitter => (
                    NodeRole::Co,
                    LinkKind::Feeder,
                    cfg.feeder_km,
                    PortClass::Trunk,
                    PortClass::Lower,
                ),
                NodeRole::Level1Splitter => (
                    NodeRole::Level2Splitter,
                    LinkKind::Distribution,
                    cfg.distribution_km,
                    PortClass::Trunk,
                    PortClass::Lower,
                ),
                NodeRole::EdgeOltSite | NodeRole::OnuSite => (
                    NodeRole::Level1Splitter,
                    LinkKind::Drop,
                    cfg.drop_km,
                    PortClass::Trunk,
                    PortClass::Lower,
                ),
            };
            let parent_name = n.parent.as_ref().ok_or_else(|| TopologyError::BadParent {
                node: n.id.clone(),
                role: n.role,
                reason: format!("missing parent {want_parent}"),
            })?;
            let parent = *topo
                .index
                .get(parent_name)
                .ok_or_else(|| TopologyError::BadParent {
                    node: n.id.clone(),
                    role: n.role,
                    reason: format!("parent `{parent_name}` does not exist"),
                })?;
            if topo.nodes[parent.0 as usize].role != want_parent {
                return Err(TopologyError::BadParent {
                    node: n.id.clone(),
                    role: n.role,
                    reason: format!("parent `{parent_name}` is not a {want_parent}"),
                });
            }
            let km = n.length_km.unwrap_or(default_km);
            let length_m = km_to_m(&n.id, km)?;
            if kind == LinkKind::Drop && km > cfg.max_drop_km {
                match cfg.drop_policy {
                    DropPolicy::Accept => {}
                    DropPolicy::Warn => {
                        let msg = format!(
                            "drop of {km} km at `{}` exceeds {} km",
                            n.id, cfg.max_drop_km
                        );
                        log::warn!("{msg}");
                        topo.warnings.push(msg);
                    }
                    DropPolicy::Reject => {
                        return Err(TopologyError::DropTooLong {
                            node: n.id.clone(),
                            length_km: km,
                            bound_km: cfg.max_drop_km,
                        })
                    }
                }
            }
            let li = topo.push_link(FiberLink {
                a: (id, own_port),
                b: (parent, parent_port),
                length_m,
                kind,
            });
            topo.parent_link[id.0 as usize] = Some(li);
        }

        for x in &cfg.xlinks {
            let a = topo.lookup_l1(&x.a).map_err(|_| TopologyError::BadXlink {
                a: x.a.clone(),
                b: x.b.clone(),
            })?;
            let b = topo.lookup_l1(&x.b).map_err(|_| TopologyError::BadXlink {
                a: x.a.clone(),
                b: x.b.clone(),
            })?;
            if a == b {
                return Err(TopologyError::BadXlink {
                    a: x.a.clone(),
                    b: x.b.clone(),
                });
            }
            let length_m = km_to_m(&x.a, x.length_km.unwrap_or(cfg.direct_km))?;
            topo.push_link(FiberLink {
                a: (a, PortClass::Xlink),
                b: (b, PortClass::Xlink),
                length_m,
                kind: LinkKind::Xlink,
            });
        }

        for (i, n) in topo.nodes.iter().enumerate() {
            if n.role == NodeRole::Level1Splitter {
                topo.rules
                    .insert(NodeId(i as u32), SplitterRuleSet::default());
            }
        }
        for r in &cfg.rules {
            let id = topo.lookup_l1(&r.splitter)?;
            let set = SplitterRuleSet {
                reflect: r.reflect.iter().map(|c| ChannelId(*c)).collect(),
                xpass: r.xpass.iter().map(|c| ChannelId(*c)).collect(),
                trunkpass: r.trunkpass.iter().map(|c| ChannelId(*c)).collect(),
            };
            topo.set_rules(id, set)?;
        }
        Ok(topo)
    }

    fn push_link(&mut self, link: FiberLink) -> usize {
        let i = self.links.len();
        self.adjacency[link.a.0 .0 as usize].push(i);
        self.adjacency[link.b.0 .0 as usize].push(i);
        self.links.push(link);
        i
    }

    fn lookup_l1(&self, name: &str) -> Result<NodeId, TopologyError> {
        let id = self.node_id(name)?;
        if self.role(id) != NodeRole::Level1Splitter {
            return Err(TopologyError::NotLevel1(name.to_owned()));
        }
        Ok(id)
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId, TopologyError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| TopologyError::UnknownNode(name.to_owned()))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0 as usize].name
    }

    pub fn role(&self, id: NodeId) -> NodeRole {
        self.nodes[id.0 as usize].role
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (NodeId(i as u32), n))
    }

    pub fn links(&self) -> &[FiberLink] {
        &self.links
    }

    pub fn co(&self) -> NodeId {
        self.nodes()
            .find(|(_, n)| n.role == NodeRole::Co)
            .map(|(id, _)| id)
            .expect("validated at build")
    }

    pub fn mode(&self) -> EastWestMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: EastWestMode) {
        self.mode = mode;
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Parent node through the node's uplink, if any.
    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent_link[id.0 as usize].map(|l| self.links[l].other(id).0)
    }

    /// Level-1 splitter a leaf site hangs from.
    pub fn home_splitter(&self, leaf: NodeId) -> Option<NodeId> {
        self.parent(leaf)
            .filter(|p| self.role(*p) == NodeRole::Level1Splitter)
    }

    /// Level-1 splitters joined to `splitter` by a cross-link.
    pub fn xlink_neighbors(&self, splitter: NodeId) -> Vec<NodeId> {
        self.adjacency[splitter.0 as usize]
            .iter()
            .filter(|l| self.links[**l].kind == LinkKind::Xlink)
            .map(|l| self.links[*l].other(splitter).0)
            .collect()
    }

    pub fn rules(&self, splitter: NodeId) -> Option<&SplitterRuleSet> {
        self.rules.get(&splitter)
    }

    pub fn set_rules(
        &mut self,
        splitter: NodeId,
        set: SplitterRuleSet,
    ) -> Result<(), TopologyError> {
        if self.role(splitter) != NodeRole::Level1Splitter {
            return Err(TopologyError::NotLevel1(self.name(splitter).to_owned()));
        }
        set.validate(self.name(splitter))?;
        self.rules.insert(splitter, set);
        Ok(())
    }

    /// Applies `edit` to a copy of the splitter's rules and installs the
    /// result only if it validates.
    pub fn update_rules<F>(&mut self, splitter: NodeId, edit: F) -> Result<bool, TopologyError>
    where
        F: FnOnce(&mut SplitterRuleSet),
    {
        let mut set = self
            .rules
            .get(&splitter)
            .cloned()
            .ok_or_else(|| TopologyError::NotLevel1(self.name(splitter).to_owned()))?;
        edit(&mut set);
        if self.rules.get(&splitter) == Some(&set) {
            return Ok(false);
        }
        self.set_rules(splitter, set)?;
        Ok(true)
    }

    /// Where channel `ch` entering the splitter through `ingress` leaves.
    /// Blocked channels yield an empty set; non-level-1 nodes always do.
    pub fn route_wavelength(
        &self,
        splitter: NodeId,
        ingress: PortClass,
        ch: ChannelId,
    ) -> BTreeSet<PortClass> {
        let mut out = BTreeSet::new();
        let Some(rules) = self.rules.get(&splitter) else {
            return out;
        };
        match ingress {
            PortClass::Lower => {
                if rules.reflect.contains(&ch) {
                    out.insert(PortClass::Lower);
                }
                if rules.trunkpass.contains(&ch) {
                    out.insert(PortClass::Trunk);
                }
                if rules.xpass.contains(&ch) {
                    out.insert(PortClass::Xlink);
                }
            }
            PortClass::Xlink => {
                if rules.xpass.contains(&ch) {
                    out.insert(PortClass::Lower);
                }
            }
            PortClass::Trunk => {
                if rules.trunkpass.contains(&ch) {
                    out.insert(PortClass::Lower);
                }
            }
            PortClass::Loopback => {}
        }
        out
    }

    /// Resolves the fiber path channel `ch` takes from `src` to `dst`.
    /// Endpoints are leaf sites or the CO. When several paths exist the
    /// shortest one is returned.
    pub fn resolve_path(
        &self,
        src: NodeId,
        dst: NodeId,
        ch: ChannelId,
        mode: EastWestMode,
    ) -> Result<Path, TopologyError> {
        if src == dst {
            return Err(TopologyError::SameEndpoints);
        }
        for ep in [src, dst] {
            if !matches!(
                self.role(ep),
                NodeRole::Co | NodeRole::OnuSite | NodeRole::EdgeOltSite
            ) {
                return Err(TopologyError::BadEndpoint(self.name(ep).to_owned()));
            }
        }
        let mut best: Option<Path> = None;
        let mut hops = Vec::new();
        for &l in &self.adjacency[src.0 as usize] {
            self.follow(src, l, dst, ch, mode, &mut hops, &mut best);
        }
        best.ok_or_else(|| TopologyError::NoPath {
            src: self.name(src).to_owned(),
            dst: self.name(dst).to_owned(),
            channel: ch,
        })
    }

    /// Traverses `link` out of `from` and continues the search.
    #[allow(clippy::too_many_arguments)]
    fn follow(
        &self,
        from: NodeId,
        link: usize,
        dst: NodeId,
        ch: ChannelId,
        mode: EastWestMode,
        hops: &mut Vec<PathHop>,
        best: &mut Option<Path>,
    ) {
        if hops.iter().any(|h| h.link == link && !h.overlay) || hops.len() > 16 {
            return;
        }
        let l = &self.links[link];
        let (next, ingress) = l.other(from);
        let pushed = if l.kind == LinkKind::Xlink && mode == EastWestMode::Overlay {
            // The cross-link rides the two distribution routes through the
            // level-2 site as a passive overlay.
            let (Some(up), Some(down)) = (
                self.parent_link[from.0 as usize],
                self.parent_link[next.0 as usize],
            ) else {
                return;
            };
            let l2 = self.links[up].other(from).0;
            hops.push(PathHop {
                from,
                to: l2,
                link: up,
                length_m: self.links[up].length_m,
                overlay: true,
            });
            hops.push(PathHop {
                from: l2,
                to: next,
                link: down,
                length_m: self.links[down].length_m,
                overlay: true,
            });
            2
        } else {
            hops.push(PathHop {
                from,
                to: next,
                link,
                length_m: l.length_m,
                overlay: false,
            });
            1
        };
        self.visit(next, ingress, link, dst, ch, mode, hops, best);
        for _ in 0..pushed {
            hops.pop();
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn visit(
        &self,
        node: NodeId,
        ingress: PortClass,
        via: usize,
        dst: NodeId,
        ch: ChannelId,
        mode: EastWestMode,
        hops: &mut Vec<PathHop>,
        best: &mut Option<Path>,
    ) {
        if node == dst {
            let total: u64 = hops.iter().map(|h| h.length_m).sum();
            if best.as_ref().is_none_or(|b| total < b.total_length_m) {
                *best = Some(Path {
                    hops: hops.clone(),
                    total_length_m: total,
                });
            }
            return;
        }
        let egress_links: Vec<usize> = match self.role(node) {
            NodeRole::Co | NodeRole::OnuSite | NodeRole::EdgeOltSite => return,
            NodeRole::Level2Splitter => {
                let want = match ingress {
                    PortClass::Lower => PortClass::Trunk,
                    PortClass::Trunk => PortClass::Lower,
                    _ => return,
                };
                self.ports(node, want).collect()
            }
            NodeRole::Level1Splitter => self
                .route_wavelength(node, ingress, ch)
                .into_iter()
                .flat_map(|p| self.ports(node, p).collect::<Vec<_>>())
                .collect(),
        };
        for l in egress_links {
            if l != via {
                self.follow(node, l, dst, ch, mode, hops, best);
            }
        }
    }

    fn ports(&self, node: NodeId, class: PortClass) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[node.0 as usize]
            .iter()
            .copied()
            .filter(move |l| self.links[*l].port_at(node) == class)
    }

    pub fn propagation_delay(&self, path: &Path) -> Nanos {
        (path.total_length_m as f64 * self.propagation_ns_per_m).round() as Nanos
    }
}
