use std::collections::BTreeSet;

use colocate_core::k8s::{emit_hostfile_configmap, emit_pod_manifest, emit_resize_patch, pod_name, PodManifestSpec};
use proptest::prelude::*;
use serde_yaml::Value;

const GOLDEN: &str = include_str!("golden/of-worker-a-0.manifest");

fn keys(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Mapping(m) => {
            for (k, v) in m {
                let path = format!("{prefix}/{}", k.as_str().unwrap());
                out.insert(path.clone());
                keys(v, &path, out);
            }
        }
        Value::Sequence(s) => {
            for v in s {
                keys(v, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

fn key_set(doc: &str) -> BTreeSet<String> {
    let v: Value = serde_yaml::from_str(doc).unwrap();
    let mut out = BTreeSet::new();
    keys(&v, "", &mut out);
    out
}

#[test]
fn golden_manifest() {
    assert_eq!(emit_pod_manifest(&PodManifestSpec::new("A", 0, 67)).unwrap(), GOLDEN);
}

#[test]
fn golden_parses_with_listing_fields() {
    let v: Value = serde_yaml::from_str(GOLDEN).unwrap();
    assert_eq!(v["metadata"]["labels"]["sim"].as_str(), Some("A"));
    let c = &v["spec"]["containers"][0];
    assert_eq!(c["resources"]["requests"]["cpu"].as_str(), Some("67m"));
    assert!(c["resources"].get("limits").is_none());
    assert_eq!(c["resizePolicy"][0]["restartPolicy"].as_str(), Some("NotRequired"));
}

#[test]
fn hostfile_configmap_parses() {
    let doc = emit_hostfile_configmap("A", &["10.0.0.1", "10.0.0.2"]).unwrap();
    let v: Value = serde_yaml::from_str(&doc).unwrap();
    assert_eq!(v["metadata"]["name"].as_str(), Some("hostfile-a"));
    assert_eq!(v["data"]["hostfile"].as_str(), Some("10.0.0.1 slots=1\n10.0.0.2 slots=1\n"));
}

#[test]
fn resize_patch_is_request_only() {
    let v: serde_json::Value = serde_json::from_str(&emit_resize_patch("of-worker-a-0", 179).unwrap()).unwrap();
    let c = &v["spec"]["containers"][0];
    assert_eq!(c["resources"]["requests"]["cpu"], "179m");
    assert!(c["resources"].get("limits").is_none());
    // Same value as before is still emitted.
    assert_eq!(emit_resize_patch("of-worker-a-0", 179).unwrap(), emit_resize_patch("of-worker-a-0", 179).unwrap());
}

proptest! {
    #[test]
    fn manifests_round_trip_with_the_same_fields(sim in "[A-Z][A-Z0-9]{0,4}", rank in 0u32..256, cpu in 10u32..64_000) {
        let doc = emit_pod_manifest(&PodManifestSpec::new(sim.clone(), rank, cpu)).unwrap();
        prop_assert!(!doc.lines().any(|l| l.trim_start().starts_with("limits:")));
        prop_assert_eq!(key_set(&doc), key_set(GOLDEN));
        let v: Value = serde_yaml::from_str(&doc).unwrap();
        let cpu_text = format!("{cpu}m");
        prop_assert_eq!(v["spec"]["containers"][0]["resources"]["requests"]["cpu"].as_str(), Some(cpu_text.as_str()));
        prop_assert_eq!(v["metadata"]["labels"]["sim"].as_str(), Some(sim.as_str()));
    }

    #[test]
    fn names_are_injective(a in "[A-Z0-9]{1,4}", b in "[A-Z0-9]{1,4}", ra in 0u32..100, rb in 0u32..100) {
        prop_assume!((a.as_str(), ra) != (b.as_str(), rb));
        prop_assert_ne!(pod_name(&a, ra).unwrap(), pod_name(&b, rb).unwrap());
    }
}
