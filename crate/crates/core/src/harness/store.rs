use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::world::World;
use super::HarnessError;
use crate::attestation::Quote;
use crate::codec::Canonical;
use crate::establishment::PlatformManifest;
use crate::package::{InstanceId, KeyBlob, PackageId};
use crate::registration::{PckCertificate, ServicePublicKey};

/// On-disk state of a simulated platform and its registration service:
///
/// ```text
/// <root>/flash/pkg<N>.blob          sealed key blob of package N
/// <root>/flash/reset_epoch          resets since establishment
/// <root>/registry/manifest.bin      last platform manifest
/// <root>/registry/service.pub       registration service public key
/// <root>/registry/pck-<id>-tcb<L>.cert
/// <root>/registry/registry.txt      human-readable registry listing
/// <root>/quotes/<name>.quote
/// ```
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Store {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, HarnessError> {
        for sub in ["flash", "registry", "quotes"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| store_err(&dir, e))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.root.join(rel);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| store_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| store_err(&path, e))
    }

    fn read(&self, rel: &str) -> Result<Option<Vec<u8>>, HarnessError> {
        let path = self.root.join(rel);
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(store_err(&path, e)),
        }
    }

    fn decode<T: Canonical>(&self, rel: &str) -> Result<Option<T>, HarnessError> {
        self.read(rel)?
            .map(|b| T::from_canonical_bytes(&b).map_err(|e| store_err(&self.root.join(rel), e)))
            .transpose()
    }

    pub fn save_blobs(&self, blobs: &BTreeMap<PackageId, KeyBlob>) -> Result<(), HarnessError> {
        for (id, blob) in blobs {
            self.write(&format!("flash/pkg{id}.blob"), &blob.to_canonical_bytes())?;
        }
        Ok(())
    }

    pub fn load_blobs(&self) -> Result<BTreeMap<PackageId, KeyBlob>, HarnessError> {
        let dir = self.root.join("flash");
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(|e| store_err(&dir, e))? {
            let entry = entry.map_err(|e| store_err(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(id) = name
                .strip_prefix("pkg")
                .and_then(|n| n.strip_suffix(".blob"))
                .and_then(|n| n.parse::<PackageId>().ok())
            else {
                continue;
            };
            if let Some(blob) = self.decode::<KeyBlob>(&format!("flash/{name}"))? {
                out.insert(id, blob);
            }
        }
        Ok(out)
    }

    pub fn save_reset_epoch(&self, epoch: u64) -> Result<(), HarnessError> {
        self.write("flash/reset_epoch", epoch.to_string().as_bytes())
    }

    pub fn load_reset_epoch(&self) -> Result<u64, HarnessError> {
        match self.read("flash/reset_epoch")? {
            None => Ok(0),
            Some(b) => String::from_utf8_lossy(&b)
                .trim()
                .parse()
                .map_err(|e| store_err(&self.root.join("flash/reset_epoch"), e)),
        }
    }

    pub fn save_manifest(&self, m: &PlatformManifest) -> Result<(), HarnessError> {
        self.write("registry/manifest.bin", &m.to_canonical_bytes())
    }

    pub fn load_manifest(&self) -> Result<Option<PlatformManifest>, HarnessError> {
        self.decode("registry/manifest.bin")
    }

    pub fn save_service_key(&self, key: &ServicePublicKey) -> Result<(), HarnessError> {
        self.write("registry/service.pub", &key.to_canonical_bytes())
    }

    pub fn load_service_key(&self) -> Result<Option<ServicePublicKey>, HarnessError> {
        self.decode("registry/service.pub")
    }

    fn pck_name(instance: &InstanceId, tcb_level: u32) -> String {
        format!("registry/pck-{}-tcb{tcb_level}.cert", instance.to_hex())
    }

    pub fn save_pck_certs(&self, certs: &[PckCertificate]) -> Result<(), HarnessError> {
        for c in certs {
            self.write(
                &Self::pck_name(&c.platform_instance_id, c.tcb_level),
                &c.to_canonical_bytes(),
            )?;
        }
        Ok(())
    }

    pub fn load_pck_cert(
        &self,
        instance: &InstanceId,
        tcb_level: u32,
    ) -> Result<Option<PckCertificate>, HarnessError> {
        self.decode(&Self::pck_name(instance, tcb_level))
    }

    pub fn save_registry_text(&self, text: &str) -> Result<(), HarnessError> {
        self.write("registry/registry.txt", text.as_bytes())
    }

    pub fn quote_path(&self, name: &str) -> PathBuf {
        self.root.join("quotes").join(format!("{name}.quote"))
    }

    pub fn save_quote(&self, name: &str, q: &Quote) -> Result<PathBuf, HarnessError> {
        self.write(&format!("quotes/{name}.quote"), &q.to_canonical_bytes())?;
        Ok(self.quote_path(name))
    }

    /// Persist everything the world has produced so far.
    pub fn save_world(&self, world: &World) -> Result<(), HarnessError> {
        self.save_blobs(&world.blobs)?;
        self.save_reset_epoch(world.reset_epoch())?;
        if let Some(m) = &world.manifest {
            self.save_manifest(m)?;
        }
        self.save_service_key(world.service.public_key())?;
        self.save_pck_certs(&world.pck_certs)?;
        self.save_registry_text(&world.service.render_registry())?;
        for (i, q) in world.quotes.iter().enumerate() {
            self.save_quote(&format!("quote-{i}"), q)?;
        }
        Ok(())
    }
}
