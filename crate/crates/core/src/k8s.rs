//! Kubernetes artifacts for applying allocation plans by hand: pod
//! manifests, hostfile ConfigMaps, in-place resize patches and the
//! `mpirun` line.
//!
//! Everything is emitted as text with fixed field order and indentation so
//! the output can be compared byte for byte.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alloc::{AllocationPlan, MIN_REQUEST_MILLICPU};

pub const DEFAULT_IMAGE: &str = "openfoam-k8s:v10";
pub const CONTAINER_NAME: &str = "openfoam";
pub const DEFAULT_SOLVER: &str = "rhoSimpleFoam";

#[derive(Debug, thiserror::Error)]
pub enum K8sError {
    #[error("simulation id {0:?} must be non-empty uppercase ASCII letters and digits")]
    InvalidSimId(String),
    #[error("pod name {0:?} is not a valid DNS label")]
    InvalidPodName(String),
    #[error("image {0:?} must be non-empty without whitespace or quotes")]
    InvalidImage(String),
    #[error("CPU request of {0} m is below the {MIN_REQUEST_MILLICPU} m floor")]
    RequestBelowFloor(u32),
    #[error("hostfile needs at least one address")]
    EmptyHostfile,
    #[error("{0:?} is not an IP address")]
    InvalidAddress(String),
    #[error("address {0} appears twice")]
    DuplicateAddress(IpAddr),
    #[error("mpirun needs at least one rank")]
    NoRanks,
    #[error("missing hostfile path")]
    MissingHostfilePath,
    #[error("writing {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, K8sError>;

/// Uppercase only, so that the lowercased pod name stays unique per id.
fn check_sim_id(sim: &str) -> Result<()> {
    if sim.is_empty() || !sim.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()) {
        return Err(K8sError::InvalidSimId(sim.to_string()));
    }
    Ok(())
}

fn check_pod_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 63
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
        && !name.starts_with('-')
        && !name.ends_with('-');
    if ok {
        Ok(())
    } else {
        Err(K8sError::InvalidPodName(name.to_string()))
    }
}

fn check_request(millicpu: u32) -> Result<()> {
    if millicpu < MIN_REQUEST_MILLICPU {
        return Err(K8sError::RequestBelowFloor(millicpu));
    }
    Ok(())
}

pub fn pod_name(sim: &str, rank: u32) -> Result<String> {
    check_sim_id(sim)?;
    Ok(format!("of-worker-{}-{rank}", sim.to_ascii_lowercase()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodManifestSpec {
    pub sim: String,
    pub rank: u32,
    pub image: String,
    pub cpu_request_millicpu: u32,
}

impl PodManifestSpec {
    pub fn new(sim: impl Into<String>, rank: u32, cpu_request_millicpu: u32) -> Self {
        Self {
            sim: sim.into(),
            rank,
            image: DEFAULT_IMAGE.to_string(),
            cpu_request_millicpu,
        }
    }

    pub fn name(&self) -> Result<String> {
        pod_name(&self.sim, self.rank)
    }

    fn validate(&self) -> Result<()> {
        check_sim_id(&self.sim)?;
        if self.image.is_empty() || self.image.chars().any(|c| c.is_whitespace() || c == '"' || c == '\'') {
            return Err(K8sError::InvalidImage(self.image.clone()));
        }
        check_request(self.cpu_request_millicpu)
    }
}

/// Requests-only pod with an in-place CPU resize policy. Limits are never
/// emitted.
pub fn emit_pod_manifest(spec: &PodManifestSpec) -> Result<String> {
    spec.validate()?;
    Ok(format!(
        "apiVersion: v1
kind: Pod
metadata:
  name: {name}
  labels:
    app: openfoam
    role: worker
    sim: {sim}
spec:
  containers:
  - name: {CONTAINER_NAME}
    image: {image}
    resources:
      requests:
        cpu: \"{cpu}m\"
      # No limits: Burstable QoS
    resizePolicy:
    - resourceName: cpu
      restartPolicy: NotRequired
",
        name = spec.name()?,
        sim = spec.sim,
        image = spec.image,
        cpu = spec.cpu_request_millicpu,
    ))
}

/// `<sim>/<pod>.manifest`, relative to an output directory.
pub fn manifest_path(sim: &str, rank: u32) -> Result<PathBuf> {
    Ok(PathBuf::from(sim).join(format!("{}.manifest", pod_name(sim, rank)?)))
}

/// Writes one manifest per rank of `plan` under `dir`.
pub fn write_plan_manifests(dir: &Path, sim: &str, plan: &AllocationPlan, image: &str) -> Result<Vec<PathBuf>> {
    let docs = plan
        .per_rank_millicpu
        .iter()
        .enumerate()
        .map(|(rank, &m)| {
            let spec = PodManifestSpec {
                sim: sim.to_string(),
                rank: rank as u32,
                image: image.to_string(),
                cpu_request_millicpu: m,
            };
            Ok((dir.join(manifest_path(sim, rank as u32)?), emit_pod_manifest(&spec)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| K8sError::Io { path, source }
    };
    let sim_dir = dir.join(sim);
    fs::create_dir_all(&sim_dir).map_err(io_err(&sim_dir))?;
    let mut paths = Vec::with_capacity(docs.len());
    for (path, doc) in docs {
        fs::write(&path, doc).map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

fn parse_addresses<S: AsRef<str>>(ips: &[S]) -> Result<Vec<IpAddr>> {
    if ips.is_empty() {
        return Err(K8sError::EmptyHostfile);
    }
    let mut seen = BTreeSet::new();
    ips.iter()
        .map(|s| {
            let s = s.as_ref().trim();
            let ip: IpAddr = s.parse().map_err(|_| K8sError::InvalidAddress(s.to_string()))?;
            if !seen.insert(ip) {
                return Err(K8sError::DuplicateAddress(ip));
            }
            Ok(ip)
        })
        .collect()
}

/// Hostfile body: one `<ip> slots=1` line per rank.
pub fn hostfile_payload<S: AsRef<str>>(ips: &[S]) -> Result<String> {
    Ok(parse_addresses(ips)?
        .iter()
        .map(|ip| format!("{ip} slots=1\n"))
        .collect())
}

/// ConfigMap `hostfile-<sim>` carrying only this simulation's pod IPs.
pub fn emit_hostfile_configmap<S: AsRef<str>>(sim: &str, ips: &[S]) -> Result<String> {
    check_sim_id(sim)?;
    let mut out = format!(
        "apiVersion: v1
kind: ConfigMap
metadata:
  name: hostfile-{lower}
  labels:
    app: openfoam
    sim: {sim}
data:
  hostfile: |
",
        lower = sim.to_ascii_lowercase()
    );
    for line in hostfile_payload(ips)?.lines() {
        out.push_str("    ");
        out.push_str(line);
        out.push('\n');
    }
    Ok(out)
}

/// Body for the pod `resize` subresource: changes only the container's CPU
/// request.
///
/// `{"spec":{"containers":[{"name":"openfoam","resources":{"requests":{"cpu":"179m"}}}]}}`
pub fn emit_resize_patch(pod: &str, millicpu: u32) -> Result<String> {
    check_pod_name(pod)?;
    check_request(millicpu)?;
    Ok(serde_json::json!({
        "spec": {
            "containers": [{
                "name": CONTAINER_NAME,
                "resources": { "requests": { "cpu": format!("{millicpu}m") } }
            }]
        }
    })
    .to_string())
}

/// `kubectl` invocation applying [`emit_resize_patch`].
pub fn resize_command(pod: &str, millicpu: u32) -> Result<String> {
    let patch = emit_resize_patch(pod, millicpu)?;
    Ok(format!("kubectl patch pod {pod} --subresource resize --patch '{patch}'"))
}

/// TCP-only launch of one simulation over its own hostfile.
pub fn emit_mpirun_command(sim: &str, n_ranks: u32, hostfile: &str) -> Result<String> {
    check_sim_id(sim)?;
    if n_ranks == 0 {
        return Err(K8sError::NoRanks);
    }
    let hostfile = hostfile.trim();
    if hostfile.is_empty() {
        return Err(K8sError::MissingHostfilePath);
    }
    Ok(format!(
        "mpirun -np {n_ranks} --hostfile {hostfile} --mca btl tcp,self -x SIM_ID={sim} {DEFAULT_SOLVER} -parallel"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_fields() {
        let doc = emit_pod_manifest(&PodManifestSpec::new("A", 0, 67)).unwrap();
        assert!(doc.contains("name: of-worker-a-0\n"));
        assert!(doc.contains("cpu: \"67m\"\n"));
        assert!(doc.contains("restartPolicy: NotRequired"));
        assert!(!doc.lines().any(|l| l.trim_start().starts_with("limits:")));
    }

    #[test]
    fn name_and_label_for_other_sims() {
        let doc = emit_pod_manifest(&PodManifestSpec::new("B", 15, 1005)).unwrap();
        assert!(doc.contains("name: of-worker-b-15\n"));
        assert!(doc.contains("    sim: B\n"));
        assert!(doc.contains("cpu: \"1005m\""));
    }

    #[test]
    fn manifest_rejects_bad_input() {
        assert!(matches!(
            emit_pod_manifest(&PodManifestSpec::new("A", 0, 0)),
            Err(K8sError::RequestBelowFloor(0))
        ));
        assert!(matches!(
            emit_pod_manifest(&PodManifestSpec::new("A_B", 0, 67)),
            Err(K8sError::InvalidSimId(_))
        ));
        assert!(matches!(pod_name("a", 0), Err(K8sError::InvalidSimId(_))));
        let mut spec = PodManifestSpec::new("A", 0, 67);
        spec.image = "bad image".into();
        assert!(matches!(emit_pod_manifest(&spec), Err(K8sError::InvalidImage(_))));
    }

    #[test]
    fn hostfile() {
        let doc = emit_hostfile_configmap("A", &["10.0.0.1", "10.0.0.2"]).unwrap();
        assert!(doc.contains("name: hostfile-a\n"));
        assert_eq!(hostfile_payload(&["10.0.0.1", "10.0.0.2"]).unwrap().lines().count(), 2);
        let many: Vec<String> = (1..=16).map(|i| format!("10.0.1.{i}")).collect();
        assert_eq!(hostfile_payload(&many).unwrap().lines().count(), 16);
        assert!(matches!(
            hostfile_payload(&["10.0.0.1", "10.0.0.1"]),
            Err(K8sError::DuplicateAddress(_))
        ));
        assert!(matches!(hostfile_payload::<&str>(&[]), Err(K8sError::EmptyHostfile)));
        assert!(matches!(hostfile_payload(&["node-1"]), Err(K8sError::InvalidAddress(_))));
    }

    #[test]
    fn resize_patch() {
        assert_eq!(
            emit_resize_patch("of-worker-a-0", 179).unwrap(),
            r#"{"spec":{"containers":[{"name":"openfoam","resources":{"requests":{"cpu":"179m"}}}]}}"#
        );
        assert!(emit_resize_patch("of-worker-a-0", 10).is_ok());
        assert!(matches!(
            emit_resize_patch("of-worker-a-0", 9),
            Err(K8sError::RequestBelowFloor(9))
        ));
        assert!(emit_resize_patch("Of-Worker", 100).is_err());
        assert!(resize_command("of-worker-a-0", 179).unwrap().contains("--subresource resize"));
    }

    #[test]
    fn mpirun() {
        let cmd = emit_mpirun_command("A", 16, "/config/hostfile").unwrap();
        assert!(cmd.contains("--mca btl tcp,self"));
        assert!(cmd.contains("-np 16 "));
        assert!(cmd.contains("--hostfile /config/hostfile "));
        assert!(emit_mpirun_command("A", 1, "/h").unwrap().contains("-np 1 "));
        assert!(matches!(
            emit_mpirun_command("A", 16, " "),
            Err(K8sError::MissingHostfilePath)
        ));
        assert!(matches!(emit_mpirun_command("A", 0, "/h"), Err(K8sError::NoRanks)));
    }

    #[test]
    fn manifests_written_per_rank() {
        let dir = tempfile::tempdir().unwrap();
        let plan = AllocationPlan::equal(3);
        let paths = write_plan_manifests(dir.path(), "C", &plan, DEFAULT_IMAGE).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths[2].ends_with("C/of-worker-c-2.manifest"));
        assert!(fs::read_to_string(&paths[1]).unwrap().contains("cpu: \"1000m\""));
    }
}
