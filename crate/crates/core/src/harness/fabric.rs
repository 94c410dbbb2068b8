use std::collections::BTreeMap;

use thiserror::Error;

use crate::establishment::PlatformState;
use crate::link::{
    receiver_attribute_check, route_request, uce_protect, uce_unprotect, CoherencyRequest,
    LinkChannel, LinkError, LinkKeySet, MemOp, Route, Topology, WirePacket, LINE_SIZE,
};
use crate::memory::{Memory, MemoryError};
use crate::package::PackageId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("request {from}->{to} timed out")]
    Timeout { from: PackageId, to: PackageId },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("package {0} has no key set for this link")]
    NotProgrammed(PackageId),
}

/// Outcome of handing a request to the local caching agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sent {
    Local(Option<[u8; LINE_SIZE]>),
    Forwarded { from: PackageId, to: PackageId },
}

/// Caching agents, link endpoints and the wires between packages.
#[derive(Debug, Clone)]
pub struct Fabric {
    topology: Topology,
    span: u64,
    endpoints: BTreeMap<(PackageId, PackageId), LinkKeySet>,
    channels: BTreeMap<(PackageId, PackageId), LinkChannel>,
    events: Vec<LinkError>,
}

impl Fabric {
    /// `span` is the size of each package's slice of the system address
    /// space; package `p` owns `[p * span, (p + 1) * span)`.
    pub fn new(topology: Topology, span: u64, state: &PlatformState) -> Self {
        let mut endpoints = BTreeMap::new();
        let mut channels = BTreeMap::new();
        for &(a, b) in &topology.links {
            for (local, remote) in [(a, b), (b, a)] {
                if let Some(keys) = state.link_endpoint(local, remote) {
                    endpoints.insert((local, remote), keys.clone());
                }
                channels.insert((local, remote), LinkChannel::new(local, remote));
            }
        }
        Self {
            topology,
            span,
            endpoints,
            channels,
            events: Vec::new(),
        }
    }

    /// Keep endpoint counters and wire history from `old` for every link
    /// whose keys did not change.
    pub fn carry_over(&mut self, old: Fabric) {
        for (k, keys) in old.endpoints {
            if self
                .endpoints
                .get(&k)
                .is_some_and(|n| n.send_fingerprint() == keys.send_fingerprint())
            {
                self.endpoints.insert(k, keys);
                if let Some(ch) = old.channels.get(&k) {
                    self.channels.insert(k, ch.clone());
                }
            }
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Security events raised by receivers so far.
    pub fn events(&self) -> &[LinkError] {
        &self.events
    }

    pub fn channel(&self, from: PackageId, to: PackageId) -> Option<&LinkChannel> {
        self.channels.get(&(from, to))
    }

    pub fn channel_mut(&mut self, from: PackageId, to: PackageId) -> Option<&mut LinkChannel> {
        self.channels.get_mut(&(from, to))
    }

    fn local_address(&self, owner: PackageId, addr: u64) -> u64 {
        addr - owner as u64 * self.span
    }

    fn apply(
        &self,
        owner: PackageId,
        req: &CoherencyRequest,
        mems: &mut BTreeMap<PackageId, Memory>,
    ) -> Result<Option<[u8; LINE_SIZE]>, FabricError> {
        let local = self.local_address(owner, req.target_address);
        let mem = mems
            .get_mut(&owner)
            .ok_or(LinkError::UnmappedAddress(req.target_address))?;
        match (req.op, &req.payload) {
            (MemOp::Write, Some(data)) => {
                mem.write_line(local, data, req.secure_attribute)?;
                Ok(None)
            }
            (MemOp::Read, _) => Ok(Some(mem.read_line(local, req.secure_attribute)?.data)),
            (MemOp::Write, None) => Err(LinkError::TamperDetected.into()),
        }
    }

    fn transmit(
        &mut self,
        from: PackageId,
        to: PackageId,
        req: &CoherencyRequest,
    ) -> Result<(), FabricError> {
        let keys = self
            .endpoints
            .get_mut(&(from, to))
            .ok_or(FabricError::NotProgrammed(from))?;
        let pkt = uce_protect(req, keys)?;
        self.channels
            .get_mut(&(from, to))
            .expect("channel exists for every link")
            .transmit(&pkt);
        Ok(())
    }

    /// Take the next packet off `from -> to` and run it through the
    /// receiving engine and caching agent.
    fn receive(&mut self, from: PackageId, to: PackageId) -> Result<CoherencyRequest, FabricError> {
        let bytes = self
            .channels
            .get_mut(&(from, to))
            .and_then(|c| c.receive())
            .ok_or(FabricError::Timeout { from, to })?;
        let keys = self
            .endpoints
            .get_mut(&(to, from))
            .ok_or(FabricError::NotProgrammed(to))?;
        let outcome = WirePacket::from_bytes(&bytes)
            .map_err(LinkError::from)
            .and_then(|pkt| uce_unprotect(&pkt, keys))
            .and_then(|req| {
                receiver_attribute_check(&req, &self.topology.epc_ranges()).map(|()| req)
            });
        outcome.map_err(|e| {
            log::debug!("link {from}->{to}: {e}");
            self.events.push(e.clone());
            FabricError::Link(e)
        })
    }

    /// Route a request from its origin package. Local requests complete
    /// immediately; remote ones are protected and queued on the wire.
    pub fn send(
        &mut self,
        req: CoherencyRequest,
        mems: &mut BTreeMap<PackageId, Memory>,
    ) -> Result<Sent, FabricError> {
        let (route, req) = route_request(req, &self.topology)?;
        match route {
            Route::Local => Ok(Sent::Local(self.apply(req.origin_package, &req, mems)?)),
            Route::Forward { to } => {
                self.transmit(req.origin_package, to, &req)?;
                Ok(Sent::Forwarded {
                    from: req.origin_package,
                    to,
                })
            }
        }
    }

    /// Owner side: accept one request from `from` and serve it. Reads are
    /// answered on the reverse channel.
    pub fn serve_one(
        &mut self,
        from: PackageId,
        owner: PackageId,
        mems: &mut BTreeMap<PackageId, Memory>,
    ) -> Result<CoherencyRequest, FabricError> {
        let req = self.receive(from, owner)?;
        if let Some(data) = self.apply(owner, &req, mems)? {
            let response = CoherencyRequest {
                origin_package: owner,
                target_address: req.target_address,
                secure_attribute: req.secure_attribute,
                op: MemOp::Read,
                payload: Some(data),
            };
            self.transmit(owner, from, &response)?;
        }
        Ok(req)
    }

    /// Requester side: collect the data response for an earlier read.
    pub fn complete_read(
        &mut self,
        requester: PackageId,
        owner: PackageId,
    ) -> Result<[u8; LINE_SIZE], FabricError> {
        let resp = self.receive(owner, requester)?;
        resp.payload.ok_or_else(|| LinkError::TamperDetected.into())
    }

    /// Full round trip with nobody interfering.
    pub fn request(
        &mut self,
        req: CoherencyRequest,
        mems: &mut BTreeMap<PackageId, Memory>,
    ) -> Result<Option<[u8; LINE_SIZE]>, FabricError> {
        let op = req.op;
        match self.send(req, mems)? {
            Sent::Local(data) => Ok(data),
            Sent::Forwarded { from, to } => {
                self.serve_one(from, to, mems)?;
                match op {
                    MemOp::Read => Ok(Some(self.complete_read(from, to)?)),
                    MemOp::Write => Ok(None),
                }
            }
        }
    }
}
