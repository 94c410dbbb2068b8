use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{Digest, PublicKey};
use crate::package::{PackageId, PackageIdentity};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryConfig {
    pub package_id: PackageId,
    pub epc_base: u64,
    pub epc_size: u64,
    pub address_map_digest: Digest,
}

impl Canonical for MemoryConfig {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.package_id)
            .u64(self.epc_base)
            .u64(self.epc_size)
            .item(&self.address_map_digest);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            package_id: dec.u32("package id")?,
            epc_base: dec.u64("epc base")?,
            epc_size: dec.u64("epc size")?,
            address_map_digest: dec.item()?,
        })
    }
}

/// The configuration each package reports before SGX may be enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformInfo {
    pub package_count: u32,
    pub package_public_keys: Vec<PublicKey>,
    pub memory_config: Vec<MemoryConfig>,
    pub link_topology: Vec<(PackageId, PackageId)>,
    pub lock_state: bool,
}

impl PlatformInfo {
    pub fn new(
        packages: &[PackageIdentity],
        memory_config: Vec<MemoryConfig>,
        link_topology: Vec<(PackageId, PackageId)>,
    ) -> Self {
        Self {
            package_count: packages.len() as u32,
            package_public_keys: packages.iter().map(|p| p.public_key()).collect(),
            memory_config,
            link_topology,
            lock_state: true,
        }
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_canonical_bytes())
    }

    /// Packages directly linked to `id`.
    pub fn neighbours(&self, id: PackageId) -> impl Iterator<Item = PackageId> + '_ {
        self.link_topology.iter().filter_map(move |&(a, b)| {
            if a == id {
                Some(b)
            } else if b == id {
                Some(a)
            } else {
                None
            }
        })
    }
}

impl Canonical for PlatformInfo {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.package_count)
            .seq(&self.package_public_keys, |e, k| {
                e.item(k);
            })
            .seq(&self.memory_config, |e, m| {
                e.item(m);
            })
            .seq(&self.link_topology, |e, &(a, b)| {
                e.u32(a).u32(b);
            })
            .bool(self.lock_state);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            package_count: dec.u32("package count")?,
            package_public_keys: dec.seq("package keys", |d| d.item())?,
            memory_config: dec.seq("memory config", |d| d.item())?,
            link_topology: dec.seq("links", |d| Ok((d.u32("link a")?, d.u32("link b")?)))?,
            lock_state: dec.bool("lock state")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigField {
    PackageCount,
    PackagePublicKeys,
    MemoryConfig,
    LinkTopology,
    LockState,
    /// Configuration no longer matches the digest locked at establishment.
    EstablishedDigest,
}

impl fmt::Display for ConfigField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfigField::PackageCount => "package_count",
            ConfigField::PackagePublicKeys => "package_public_keys",
            ConfigField::MemoryConfig => "memory_config",
            ConfigField::LinkTopology => "link_topology",
            ConfigField::LockState => "lock_state",
            ConfigField::EstablishedDigest => "established_digest",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inconsistency {
    pub package: PackageId,
    pub field: ConfigField,
}

impl fmt::Display for Inconsistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "package {} differs in {}", self.package, self.field)
    }
}

/// Every report must match the first field by field, and every package
/// must have locked its configuration.
pub fn verify_config_consistency(infos: &[(PackageId, PlatformInfo)]) -> Result<(), Inconsistency> {
    let Some((_, reference)) = infos.first() else {
        return Ok(());
    };
    for (id, info) in infos.iter().skip(1) {
        let field = if info.package_count != reference.package_count {
            Some(ConfigField::PackageCount)
        } else if info.package_public_keys != reference.package_public_keys {
            Some(ConfigField::PackagePublicKeys)
        } else if info.memory_config != reference.memory_config {
            Some(ConfigField::MemoryConfig)
        } else if info.link_topology != reference.link_topology {
            Some(ConfigField::LinkTopology)
        } else {
            None
        };
        if let Some(field) = field {
            return Err(Inconsistency {
                package: *id,
                field,
            });
        }
    }
    if let Some((id, _)) = infos.iter().find(|(_, info)| !info.lock_state) {
        return Err(Inconsistency {
            package: *id,
            field: ConfigField::LockState,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SimRng;

    fn info() -> PlatformInfo {
        let mut rng = SimRng::from_seed(1);
        let pkgs: Vec<_> = (0..2)
            .map(|i| PackageIdentity::manufacture(i, 1, &mut rng))
            .collect();
        let mem = (0..2)
            .map(|i| MemoryConfig {
                package_id: i,
                epc_base: 0x1000,
                epc_size: 0x1000,
                address_map_digest: Digest::of(b"identity"),
            })
            .collect();
        PlatformInfo::new(&pkgs, mem, vec![(0, 1)])
    }

    #[test]
    fn identical_locked_infos_pass() {
        assert!(verify_config_consistency(&[(0, info()), (1, info())]).is_ok());
    }

    #[test]
    fn epc_size_difference_reported_as_memory_config() {
        let mut other = info();
        other.memory_config[1].epc_size = 0x2000;
        assert_eq!(
            verify_config_consistency(&[(0, info()), (1, other)]),
            Err(Inconsistency {
                package: 1,
                field: ConfigField::MemoryConfig
            })
        );
    }

    #[test]
    fn one_unlocked_package_reported_as_lock_state() {
        let mut unlocked = info();
        unlocked.lock_state = false;
        assert_eq!(
            verify_config_consistency(&[(0, info()), (1, unlocked)])
                .unwrap_err()
                .field,
            ConfigField::LockState
        );
    }

    #[test]
    fn canonical_round_trip() {
        let i = info();
        assert_eq!(
            PlatformInfo::from_canonical_bytes(&i.to_canonical_bytes()).unwrap(),
            i
        );
    }
}
