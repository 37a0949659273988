#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperbert/hypergraph.hpp"

namespace hyperbert {

struct Splits {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
};

struct DatasetStats {
  Index num_nodes = 0;
  Index num_hyperedges = 0;
  Index num_classes = 0;

  bool operator==(const DatasetStats&) const = default;
};

// Text-attributed hypergraph: every node carries a text and a class label.
struct TahgDataset {
  Hypergraph hypergraph;
  std::vector<std::string> texts;
  std::vector<int> labels;
  std::vector<std::string> label_texts;  // class id -> label string
  Splits splits;

  Index num_classes() const { return static_cast<Index>(label_texts.size()); }
  DatasetStats stats() const;
  // Throws DataError when texts/labels do not cover every node, a label is out
  // of range, or the splits overlap or reference unknown nodes.
  void validate() const;
  std::vector<std::string> texts_of(const std::vector<NodeId>& nodes) const;
};

struct LoadOptions {
  // Give every isolated node a singleton hyperedge instead of rejecting it.
  bool add_singleton_edges = false;
};

// nodes: TSV with a header line and columns id, label, text (ids 0..n-1 in any
// order). edges: one hyperedge per line, whitespace-separated node ids; blank
// lines and lines starting with '#' are skipped. splits: node ids under
// [train], [val] and [test] headers.
TahgDataset load_tahg(const std::filesystem::path& nodes_path,
                      const std::filesystem::path& edges_path,
                      const std::filesystem::path& splits_path, const LoadOptions& options = {});

// Directory holding nodes.tsv, edges.txt and splits.txt.
TahgDataset load_tahg_dir(const std::filesystem::path& dir, const LoadOptions& options = {});
void write_tahg(const TahgDataset& dataset, const std::filesystem::path& dir);

struct StatsReport {
  bool pass = true;
  DatasetStats actual;
  std::vector<std::string> mismatches;
};

// Recounts nodes, hyperedges and classes and compares each with `expected`.
StatsReport validate_stats(const TahgDataset& dataset, const DatasetStats& expected);

// Published statistics of the benchmark corpora, keyed by lowercase name
// (cora, pubmed, dblp-a, cora-ca, imdb).
const std::map<std::string, DatasetStats>& published_stats();
std::optional<DatasetStats> published_stats(const std::string& name);

struct SyntheticSpec {
  Index num_classes = 3;
  Index nodes_per_class = 100;
  Index edges_per_class = 30;
  double homophily = 0.9;
  Index vocab_per_class = 100;
  Index background_vocab = 100;
  Index text_len = 6;
  double noise = 0.3;
  Index min_edge_size = 3;
  Index max_edge_size = 6;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

// Planted-partition text-attributed hypergraph. Each hyperedge has a home
// class; each member comes from the home class with probability `homophily`
// and otherwise from a uniformly chosen other class. Each token comes from
// the node's class vocabulary with probability 1 - noise and otherwise from a
// shared background vocabulary. Nodes left uncovered join one existing
// hyperedge (home class chosen by the same homophily rule). Splits are 50/25/25
// per class.
TahgDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace hyperbert
