//! The release format: one copy instance per line,
//! `origin;origin_time;blob;destination;destination_time`, decimal unpadded
//! times, in 128 gzip files keyed by origin project.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::detect::CopyInstance;
use crate::engine::partition::PartitionId;
use crate::engine::record::{split_fields, unpad_time};
use crate::engine::runfile::{RunReader, RunWriter};
use crate::error::Result;

pub const DEFAULT_TAG: &str = "local";

pub fn export_file_name(tag: &str, part: PartitionId) -> String {
    format!("Ptb2PtFull.{tag}.{}.gz", part.index())
}

pub fn export_path(dir: &Path, tag: &str, part: PartitionId) -> PathBuf {
    dir.join(export_file_name(tag, part))
}

pub fn format_instance(inst: &CopyInstance) -> String {
    format!(
        "{};{};{};{};{}",
        inst.project_o, inst.time_o, inst.blob, inst.project_d, inst.time_d
    )
}

/// Rewrites a padded Ptb2Pt partition in release form.
pub fn export_partition(input: &Path, output: &Path) -> Result<u64> {
    let mut w = RunWriter::create(output)?;
    for rec in RunReader::open_or_empty(input)? {
        let rec = rec?;
        let [po, to, b, pd, td] = split_fields::<5>(&rec, "Ptb2Pt")?;
        w.write_record(&format!("{po};{};{b};{pd};{}", unpad_time(to), unpad_time(td)))?;
    }
    w.finish()
}

/// Reads all 128 release files for `tag` back into instances.
pub fn read_export(dir: &Path, tag: &str) -> Result<BTreeSet<CopyInstance>> {
    let mut out = BTreeSet::new();
    for part in PartitionId::all() {
        for line in RunReader::open(export_path(dir, tag, part))? {
            out.insert(CopyInstance::parse(&line?)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::runfile::{read_all, write_all};
    use proptest::prelude::*;

    fn reference_instance() -> CopyInstance {
        CopyInstance {
            project_o: "MeigeJia_ECE-364".into(),
            time_o: 1514098666,
            blob: "010000001b502dcb0fc8e89d4f854979c93503f8".parse().unwrap(),
            project_d: "HaoboChen1887_Purdue".into(),
            time_d: 1598024605,
        }
    }

    #[test]
    fn reference_line() {
        assert_eq!(
            format_instance(&reference_instance()),
            "MeigeJia_ECE-364;1514098666;010000001b502dcb0fc8e89d4f854979c93503f8;HaoboChen1887_Purdue;1598024605"
        );
    }

    #[test]
    fn export_strips_padding() {
        let dir = tempfile::tempdir().unwrap();
        let mut inst = reference_instance();
        inst.time_o = 631152000;
        write_all(dir.path().join("in"), [inst.to_padded_line()]).unwrap();
        export_partition(&dir.path().join("in"), &dir.path().join("out")).unwrap();
        let got = read_all(dir.path().join("out")).unwrap();
        assert_eq!(got, vec![format_instance(&inst)]);
        assert!(got[0].starts_with("MeigeJia_ECE-364;631152000;"));
    }

    #[test]
    fn file_naming() {
        assert_eq!(export_file_name("V", PartitionId::new(0).unwrap()), "Ptb2PtFull.V.0.gz");
        assert_eq!(export_file_name("local", PartitionId::new(127).unwrap()), "Ptb2PtFull.local.127.gz");
    }

    fn name() -> impl Strategy<Value = String> {
        "[A-Za-z0-9_.-]{1,20}"
    }

    proptest! {
        #[test]
        fn parse_inverts_format(
            po in name(), pd in name(),
            to in 0i64..=9_999_999_999, td in 0i64..=9_999_999_999,
            blob in proptest::array::uniform20(any::<u8>()),
        ) {
            let inst = CopyInstance {
                project_o: po, time_o: to,
                blob: crate::oid::ObjectId::from_bytes(blob),
                project_d: pd, time_d: td,
            };
            prop_assert_eq!(CopyInstance::parse(&format_instance(&inst)).unwrap(), inst.clone());
            prop_assert_eq!(CopyInstance::parse(&inst.to_padded_line()).unwrap(), inst);
        }
    }
}
