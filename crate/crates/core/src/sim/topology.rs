use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::message::{canonical_text, Endpoint, NetAddress, ServiceRef, Subnet, VERSION_CAP};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceInstance {
    pub name: ServiceRef,
    #[serde(deserialize_with = "de_version")]
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_token: Option<String>,
}

fn de_version<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(canonical_text(&String::deserialize(d)?, VERSION_CAP))
}

impl ServiceInstance {
    pub fn new(name: &str, version: &str) -> Self {
        ServiceInstance { name: ServiceRef::new(name), version: canonical_text(version, VERSION_CAP), data_token: None }
    }

    pub fn with_data(mut self, token: &str) -> Self {
        self.data_token = Some(token.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    #[serde(default)]
    pub name: String,
    pub addresses: Vec<NetAddress>,
    #[serde(default)]
    pub services: Vec<ServiceInstance>,
}

impl Node {
    pub fn service(&self, name: &ServiceRef) -> Option<&ServiceInstance> {
        self.services.iter().find(|s| &s.name == name)
    }

    pub fn primary_address(&self) -> NetAddress {
        self.addresses[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachedSubnet {
    pub prefix: Subnet,
    pub members: Vec<NetAddress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Router {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "subnets")]
    pub attached_subnets: Vec<AttachedSubnet>,
    /// Names of directly linked routers. Routers sharing a prefix are
    /// linked implicitly.
    #[serde(default)]
    pub links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}", .0.join("; "))]
pub struct TopologyError(pub Vec<String>);

/// Machines, routers and the static routing table derived from them.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    routers: Vec<Router>,
    agent: usize,
    agent_service: ServiceRef,
    goal: Endpoint,
    by_address: HashMap<NetAddress, usize>,
    /// routers serving each address
    attachments: HashMap<NetAddress, Vec<usize>>,
    /// router-to-router hop distance; `None` when disconnected
    distance: Vec<Vec<Option<u32>>>,
}

impl Topology {
    pub fn new(
        nodes: Vec<Node>,
        routers: Vec<Router>,
        agent: usize,
        agent_service: ServiceRef,
        goal: Endpoint,
    ) -> Result<Self, TopologyError> {
        let mut issues = Vec::new();
        let mut by_address = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.addresses.is_empty() {
                issues.push(format!("node {i} has no address"));
            }
            let mut names = BTreeSet::new();
            for s in &node.services {
                if !names.insert(s.name.clone()) {
                    issues.push(format!("node {i} lists service `{}` twice", s.name));
                }
            }
            for &addr in &node.addresses {
                if by_address.insert(addr, i).is_some() {
                    issues.push(format!("address {addr} is assigned to more than one node"));
                }
            }
        }

        let router_index: HashMap<&str, usize> =
            routers.iter().enumerate().map(|(i, r)| (r.name.as_str(), i)).collect();
        let mut attachments: HashMap<NetAddress, Vec<usize>> = HashMap::new();
        let mut subnet_of: HashMap<NetAddress, BTreeSet<Subnet>> = HashMap::new();
        let mut prefix_routers: BTreeMap<Subnet, BTreeSet<usize>> = BTreeMap::new();
        for (ri, router) in routers.iter().enumerate() {
            for sub in &router.attached_subnets {
                prefix_routers.entry(sub.prefix).or_default().insert(ri);
                for &m in &sub.members {
                    if !sub.prefix.contains(m) {
                        issues.push(format!("{m} is not inside {}", sub.prefix));
                    }
                    if !by_address.contains_key(&m) {
                        issues.push(format!("subnet {} lists unknown member {m}", sub.prefix));
                    }
                    subnet_of.entry(m).or_default().insert(sub.prefix);
                    let rs = attachments.entry(m).or_default();
                    if !rs.contains(&ri) {
                        rs.push(ri);
                    }
                }
            }
        }
        for node in &nodes {
            for addr in &node.addresses {
                match subnet_of.get(addr).map(BTreeSet::len) {
                    Some(1) => {}
                    Some(n) => issues.push(format!("{addr} belongs to {n} subnets")),
                    None => issues.push(format!("{addr} is not attached to any router")),
                }
            }
        }

        let n = routers.len();
        let mut adjacency = vec![BTreeSet::new(); n];
        for rs in prefix_routers.values() {
            for &a in rs {
                for &b in rs {
                    if a != b {
                        adjacency[a].insert(b);
                    }
                }
            }
        }
        for (ri, router) in routers.iter().enumerate() {
            for link in &router.links {
                match router_index.get(link.as_str()) {
                    Some(&other) if other != ri => {
                        adjacency[ri].insert(other);
                        adjacency[other].insert(ri);
                    }
                    Some(_) => {}
                    None => issues.push(format!("router `{}` links to unknown `{link}`", router.name)),
                }
            }
        }
        let distance = (0..n)
            .map(|start| {
                let mut dist = vec![None; n];
                dist[start] = Some(0);
                let mut queue = VecDeque::from([start]);
                while let Some(r) = queue.pop_front() {
                    let d = dist[r].unwrap_or(0);
                    for &next in &adjacency[r] {
                        if dist[next].is_none() {
                            dist[next] = Some(d + 1);
                            queue.push_back(next);
                        }
                    }
                }
                dist
            })
            .collect();

        match nodes.get(agent) {
            None => issues.push("agent node does not exist".into()),
            Some(node) if node.service(&agent_service).is_none() => {
                issues.push(format!("agent node does not run service `{agent_service}`"))
            }
            Some(_) => {}
        }
        match by_address.get(&goal.ip).map(|&i| &nodes[i]) {
            None => issues.push(format!("goal address {} is not a node", goal.ip)),
            Some(node) if node.service(&goal.service).is_none() => {
                issues.push(format!("goal service `{}` not found on {}", goal.service, goal.ip))
            }
            Some(_) => {}
        }

        if !issues.is_empty() {
            return Err(TopologyError(issues));
        }
        Ok(Topology { nodes, routers, agent, agent_service, goal, by_address, attachments, distance })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn routers(&self) -> &[Router] {
        &self.routers
    }

    pub fn agent_node(&self) -> &Node {
        &self.nodes[self.agent]
    }

    pub fn agent_endpoint(&self) -> Endpoint {
        Endpoint::new(self.agent_node().primary_address(), self.agent_service.clone())
    }

    pub fn goal(&self) -> &Endpoint {
        &self.goal
    }

    pub fn node_at(&self, addr: NetAddress) -> Option<&Node> {
        self.by_address.get(&addr).map(|&i| &self.nodes[i])
    }

    /// Number of routers a message traverses from `src` to `dst`, or `None`
    /// when no route exists.
    pub fn router_hops(&self, src: NetAddress, dst: NetAddress) -> Option<u32> {
        let from = self.attachments.get(&src)?;
        let to = self.attachments.get(&dst)?;
        from.iter().flat_map(|&a| to.iter().filter_map(move |&b| self.distance[a][b])).min().map(|d| d + 1)
    }

    /// Longest router path between any two attached addresses.
    pub fn diameter(&self) -> u32 {
        self.distance.iter().flatten().flatten().copied().max().unwrap_or(0) + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> NetAddress {
        s.parse().unwrap()
    }

    fn two_router_topology() -> Topology {
        let nodes = vec![
            Node {
                name: "agent".into(),
                addresses: vec![addr("10.0.0.10")],
                services: vec![ServiceInstance::new("aica", "1")],
            },
            Node {
                name: "web".into(),
                addresses: vec![addr("10.0.0.2")],
                services: vec![ServiceInstance::new("http", "2.4")],
            },
            Node {
                name: "db".into(),
                addresses: vec![addr("10.0.1.3")],
                services: vec![ServiceInstance::new("mysql", "5.5")],
            },
        ];
        let routers = vec![
            Router {
                name: "r1".into(),
                attached_subnets: vec![AttachedSubnet {
                    prefix: "10.0.0.0/24".parse().unwrap(),
                    members: vec![addr("10.0.0.10"), addr("10.0.0.2")],
                }],
                links: vec!["r2".into()],
            },
            Router {
                name: "r2".into(),
                attached_subnets: vec![AttachedSubnet {
                    prefix: "10.0.1.0/24".parse().unwrap(),
                    members: vec![addr("10.0.1.3")],
                }],
                links: vec![],
            },
        ];
        Topology::new(nodes, routers, 0, "aica".into(), Endpoint::new(addr("10.0.1.3"), "mysql")).unwrap()
    }

    #[test]
    fn hop_counts_follow_router_graph() {
        let t = two_router_topology();
        assert_eq!(t.router_hops(addr("10.0.0.10"), addr("10.0.0.2")), Some(1));
        assert_eq!(t.router_hops(addr("10.0.0.10"), addr("10.0.1.3")), Some(2));
        assert_eq!(t.router_hops(addr("10.0.0.10"), addr("10.9.9.9")), None);
        assert_eq!(t.diameter(), 2);
    }

    #[test]
    fn validation_collects_every_issue() {
        let nodes = vec![Node { name: "a".into(), addresses: vec![addr("10.0.0.1")], services: vec![] }];
        let err = Topology::new(nodes, vec![], 3, "aica".into(), Endpoint::new(addr("1.1.1.1"), "x")).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }
}
