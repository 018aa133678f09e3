//! Cluster map files: a header `K L s seed`, then one line of
//! space-separated label ids per cluster.

use std::path::Path;

use lightxml_core::cluster::ClusterMap;

use crate::error::{CliError, Result};

pub fn format_cluster_map(map: &ClusterMap) -> String {
    let mut out = format!(
        "{} {} {} {}\n",
        map.num_clusters(),
        map.num_labels(),
        map.max_size(),
        map.seed()
    );
    for m in map.all_members() {
        let ids: Vec<String> = m.iter().map(u32::to_string).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_cluster_map(text: &str, path: &Path) -> Result<ClusterMap> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let fields: Vec<u64> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::parse(path, 1, format!("bad header {header:?}, expected \"K L s seed\"")))?;
    let [k, l, s, seed] = fields[..] else {
        return Err(CliError::parse(path, 1, "header must be \"K L s seed\""));
    };
    let mut members = Vec::with_capacity(k as usize);
    for (i, line) in lines.enumerate() {
        let ids = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<Vec<u32>, _>>()
            .map_err(|_| CliError::parse(path, i + 2, "bad label id"))?;
        members.push(ids);
    }
    if members.len() as u64 != k {
        return Err(CliError::parse(
            path,
            members.len() + 1,
            format!("header declares {k} clusters but {} lines follow", members.len()),
        ));
    }
    ClusterMap::from_members(members, l as usize, s as usize, seed)
        .map_err(|e| CliError::parse(path, 1, e.to_string()))
}

pub fn write_cluster_map(path: &Path, map: &ClusterMap) -> Result<()> {
    std::fs::write(path, format_cluster_map(map)).map_err(|e| CliError::io(path, e))
}

pub fn read_cluster_map(path: &Path) -> Result<ClusterMap> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_cluster_map(&text, path)
}
