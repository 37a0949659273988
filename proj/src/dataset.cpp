#include "hyperbert/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "hyperbert/errors.hpp"
#include "hyperbert/io.hpp"

namespace hyperbert {

namespace {

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.filename().string() + ":" + std::to_string(line);
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

NodeId parse_id(std::string_view text, const std::filesystem::path& path, std::size_t line) {
  NodeId v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || v < 0) {
    throw ParseError(where(path, line) + ": invalid node id '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string sanitize(std::string text) {
  for (char& c : text) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

}  // namespace

// --- dataset ------------------------------------------------------------

DatasetStats TahgDataset::stats() const {
  std::set<int> classes(labels.begin(), labels.end());
  return DatasetStats{hypergraph.num_nodes(), hypergraph.num_hyperedges(),
                      static_cast<Index>(std::max(classes.size(), label_texts.size()))};
}

void TahgDataset::validate() const {
  const Index n = hypergraph.num_nodes();
  if (static_cast<Index>(texts.size()) != n || static_cast<Index>(labels.size()) != n) {
    throw DataError("dataset: texts/labels do not cover all " + std::to_string(n) + " nodes");
  }
  for (Index v = 0; v < n; ++v) {
    const int y = labels[static_cast<std::size_t>(v)];
    if (y < 0 || y >= num_classes()) {
      throw DataError("dataset: node " + std::to_string(v) + " has label " + std::to_string(y) +
                      " outside [0, " + std::to_string(num_classes()) + ")");
    }
  }
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (const auto* split : {&splits.train, &splits.val, &splits.test}) {
    for (NodeId v : *split) {
      if (v < 0 || v >= n) throw DataError("dataset: split references unknown node " + std::to_string(v));
      if (seen[static_cast<std::size_t>(v)]++ != 0) {
        throw DataError("dataset: node " + std::to_string(v) + " appears in more than one split slot");
      }
    }
  }
}

std::vector<std::string> TahgDataset::texts_of(const std::vector<NodeId>& nodes) const {
  std::vector<std::string> out;
  out.reserve(nodes.size());
  for (NodeId v : nodes) out.push_back(texts.at(static_cast<std::size_t>(v)));
  return out;
}

// --- loading ------------------------------------------------------------

TahgDataset load_tahg(const std::filesystem::path& nodes_path,
                      const std::filesystem::path& edges_path,
                      const std::filesystem::path& splits_path, const LoadOptions& options) {
  TahgDataset ds;

  // nodes
  std::vector<std::optional<std::pair<std::string, std::string>>> rows;
  {
    std::ifstream in = open(nodes_path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(where(nodes_path, 1) + ": missing header line");
    ++lineno;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      if (line.empty()) continue;
      const auto tab1 = line.find('\t');
      const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
      if (tab2 == std::string::npos) {
        throw ParseError(where(nodes_path, lineno) + ": expected id<TAB>label<TAB>text");
      }
      const NodeId v = parse_id(std::string_view(line).substr(0, tab1), nodes_path, lineno);
      if (v >= static_cast<NodeId>(rows.size())) rows.resize(static_cast<std::size_t>(v) + 1);
      if (rows[static_cast<std::size_t>(v)]) {
        throw ParseError(where(nodes_path, lineno) + ": duplicate node id " + std::to_string(v));
      }
      rows[static_cast<std::size_t>(v)] =
          std::make_pair(line.substr(tab1 + 1, tab2 - tab1 - 1), line.substr(tab2 + 1));
    }
  }
  std::unordered_map<std::string, int> label_ids;
  for (std::size_t v = 0; v < rows.size(); ++v) {
    if (!rows[v]) throw ParseError(nodes_path.filename().string() + ": node " + std::to_string(v) + " is missing");
  }
  // Label ids follow first appearance in file order, so re-read the order.
  {
    std::ifstream in = open(nodes_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      strip_cr(line);
      if (line.empty()) continue;
      const auto tab1 = line.find('\t');
      const auto tab2 = line.find('\t', tab1 + 1);
      std::string label = line.substr(tab1 + 1, tab2 - tab1 - 1);
      if (label_ids.emplace(label, static_cast<int>(ds.label_texts.size())).second) {
        ds.label_texts.push_back(label);
      }
    }
  }
  const auto n = static_cast<Index>(rows.size());
  for (auto& row : rows) {
    ds.labels.push_back(label_ids.at(row->first));
    ds.texts.push_back(std::move(row->second));
  }

  // edges
  std::vector<std::vector<NodeId>> edges;
  {
    std::ifstream in = open(edges_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      if (!line.empty() && line.front() == '#') continue;
      const auto parts = fields(line);
      if (parts.empty()) {
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        throw ParseError(where(edges_path, lineno) + ": empty hyperedge");
      }
      std::vector<NodeId> edge;
      for (auto p : parts) {
        const NodeId v = parse_id(p, edges_path, lineno);
        if (v >= n) {
          throw ParseError(where(edges_path, lineno) + ": unknown node id " + std::to_string(v));
        }
        if (std::find(edge.begin(), edge.end(), v) != edge.end()) {
          throw ParseError(where(edges_path, lineno) + ": node " + std::to_string(v) +
                           " repeated in hyperedge");
        }
        edge.push_back(v);
      }
      edges.push_back(std::move(edge));
    }
  }
  ds.hypergraph = Hypergraph(n, std::move(edges));
  const auto isolated = isolated_nodes(ds.hypergraph);
  if (!isolated.empty()) {
    if (!options.add_singleton_edges) {
      throw DataError("node " + std::to_string(isolated.front()) +
                      " belongs to no hyperedge (enable singleton edges to load anyway)");
    }
    ds.hypergraph = with_singleton_edges(ds.hypergraph);
  }

  // splits
  {
    std::ifstream in = open(splits_path);
    std::string line;
    std::size_t lineno = 0;
    std::vector<NodeId>* current = nullptr;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      const auto parts = fields(line);
      if (parts.empty()) continue;
      if (parts.front().front() == '[') {
        if (parts.front() == "[train]") current = &ds.splits.train;
        else if (parts.front() == "[val]") current = &ds.splits.val;
        else if (parts.front() == "[test]") current = &ds.splits.test;
        else throw ParseError(where(splits_path, lineno) + ": unknown section " + std::string(parts.front()));
        continue;
      }
      if (current == nullptr) throw ParseError(where(splits_path, lineno) + ": node ids before a section header");
      for (auto p : parts) {
        const NodeId v = parse_id(p, splits_path, lineno);
        if (v >= n) throw ParseError(where(splits_path, lineno) + ": unknown node id " + std::to_string(v));
        current->push_back(v);
      }
    }
  }
  ds.validate();
  return ds;
}

TahgDataset load_tahg_dir(const std::filesystem::path& dir, const LoadOptions& options) {
  return load_tahg(dir / "nodes.tsv", dir / "edges.txt", dir / "splits.txt", options);
}

void write_tahg(const TahgDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  std::ostringstream nodes;
  nodes << "id\tlabel\ttext\n";
  for (Index v = 0; v < ds.hypergraph.num_nodes(); ++v) {
    const auto i = static_cast<std::size_t>(v);
    nodes << v << '\t' << sanitize(ds.label_texts[static_cast<std::size_t>(ds.labels[i])]) << '\t'
          << sanitize(ds.texts[i]) << '\n';
  }
  std::ostringstream edges;
  for (const auto& edge : ds.hypergraph.hyperedges()) {
    for (std::size_t k = 0; k < edge.size(); ++k) edges << (k ? " " : "") << edge[k];
    edges << '\n';
  }
  std::ostringstream splits;
  const std::pair<const char*, const std::vector<NodeId>*> sections[] = {
      {"[train]", &ds.splits.train}, {"[val]", &ds.splits.val}, {"[test]", &ds.splits.test}};
  for (const auto& [name, ids] : sections) {
    splits << name << '\n';
    for (std::size_t k = 0; k < ids->size(); ++k) {
      splits << (*ids)[k] << ((k + 1) % 20 == 0 || k + 1 == ids->size() ? "\n" : " ");
    }
  }
  write_file_atomically(dir / "nodes.tsv", nodes.str());
  write_file_atomically(dir / "edges.txt", edges.str());
  write_file_atomically(dir / "splits.txt", splits.str());
}

// --- statistics ---------------------------------------------------------

StatsReport validate_stats(const TahgDataset& ds, const DatasetStats& expected) {
  StatsReport report;
  report.actual = ds.stats();
  auto check = [&](const char* what, Index actual, Index want) {
    if (actual != want) {
      report.pass = false;
      report.mismatches.push_back(std::string(what) + ": expected " + std::to_string(want) +
                                  ", found " + std::to_string(actual));
    }
  };
  check("nodes", report.actual.num_nodes, expected.num_nodes);
  check("hyperedges", report.actual.num_hyperedges, expected.num_hyperedges);
  check("classes", report.actual.num_classes, expected.num_classes);
  return report;
}

const std::map<std::string, DatasetStats>& published_stats() {
  static const std::map<std::string, DatasetStats> table = {
      {"cora", {1434, 1579, 7}},   {"pubmed", {3840, 7963, 3}}, {"dblp-a", {2591, 2690, 6}},
      {"cora-ca", {2388, 1072, 7}}, {"imdb", {3939, 2015, 3}},
  };
  return table;
}

std::optional<DatasetStats> published_stats(const std::string& name) {
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto& table = published_stats();
  auto it = table.find(key);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

// --- synthetic generator ------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_classes < 1 || nodes_per_class < 1 || edges_per_class < 1 || vocab_per_class < 1 ||
      background_vocab < 1 || text_len < 1 || min_edge_size < 1 || max_edge_size < min_edge_size) {
    throw ConfigError("synthetic: counts must be at least 1 and edge sizes ordered");
  }
  if (homophily < 0.0 || homophily > 1.0) throw ConfigError("synthetic: homophily must lie in [0, 1]");
  if (noise < 0.0 || noise > 1.0) throw ConfigError("synthetic: noise must lie in [0, 1]");
  if (max_edge_size > num_classes * nodes_per_class) {
    throw ConfigError("synthetic: hyperedges cannot be larger than the node set");
  }
}

TahgDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Index classes = spec.num_classes;
  const Index per_class = spec.nodes_per_class;
  const Index n = classes * per_class;
  auto class_of = [&](NodeId v) { return static_cast<int>(v / per_class); };
  auto uniform = [&](Index lo, Index hi) {  // inclusive
    return std::uniform_int_distribution<Index>(lo, hi)(rng);
  };
  std::bernoulli_distribution stay_home(spec.homophily);
  auto member_class = [&](Index home) {
    if (classes == 1 || stay_home(rng)) return home;
    const Index other = uniform(0, classes - 2);
    return other >= home ? other + 1 : other;
  };

  std::vector<std::vector<NodeId>> edges;
  std::vector<Index> edge_home;
  for (Index home = 0; home < classes; ++home) {
    for (Index k = 0; k < spec.edges_per_class; ++k) {
      const Index size = uniform(spec.min_edge_size, spec.max_edge_size);
      std::vector<NodeId> edge;
      while (static_cast<Index>(edge.size()) < size) {
        const Index c = member_class(home);
        // Redraw when the chosen class has no unused node left.
        Index unused = 0;
        for (NodeId v : edge) unused += class_of(v) == c ? 1 : 0;
        if (unused >= per_class) continue;
        NodeId v = 0;
        do {
          v = c * per_class + uniform(0, per_class - 1);
        } while (std::find(edge.begin(), edge.end(), v) != edge.end());
        edge.push_back(v);
      }
      std::sort(edge.begin(), edge.end());
      edges.push_back(std::move(edge));
      edge_home.push_back(home);
    }
  }

  std::vector<char> covered(static_cast<std::size_t>(n), 0);
  for (const auto& e : edges) {
    for (NodeId v : e) covered[static_cast<std::size_t>(v)] = 1;
  }
  for (NodeId v = 0; v < n; ++v) {
    if (covered[static_cast<std::size_t>(v)]) continue;
    const Index home = member_class(class_of(v));
    const Index pick = home * spec.edges_per_class + uniform(0, spec.edges_per_class - 1);
    auto& edge = edges[static_cast<std::size_t>(pick)];
    edge.insert(std::upper_bound(edge.begin(), edge.end(), v), v);
  }

  TahgDataset ds;
  ds.hypergraph = Hypergraph(n, std::move(edges));
  std::bernoulli_distribution from_class(1.0 - spec.noise);
  for (NodeId v = 0; v < n; ++v) {
    std::string text;
    for (Index k = 0; k < spec.text_len; ++k) {
      if (k) text += ' ';
      if (from_class(rng)) {
        text += "c" + std::to_string(class_of(v)) + "t" + std::to_string(uniform(0, spec.vocab_per_class - 1));
      } else {
        text += "bg" + std::to_string(uniform(0, spec.background_vocab - 1));
      }
    }
    ds.texts.push_back(std::move(text));
    ds.labels.push_back(class_of(v));
  }
  for (Index c = 0; c < classes; ++c) ds.label_texts.push_back("class " + std::to_string(c));

  for (Index c = 0; c < classes; ++c) {
    std::vector<NodeId> members(static_cast<std::size_t>(per_class));
    for (Index k = 0; k < per_class; ++k) members[static_cast<std::size_t>(k)] = c * per_class + k;
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(per_class / 2);
    const auto n_val = static_cast<std::size_t>(per_class / 4);
    ds.splits.train.insert(ds.splits.train.end(), members.begin(), members.begin() + n_train);
    ds.splits.val.insert(ds.splits.val.end(), members.begin() + n_train, members.begin() + n_train + n_val);
    ds.splits.test.insert(ds.splits.test.end(), members.begin() + n_train + n_val, members.end());
  }
  for (auto* split : {&ds.splits.train, &ds.splits.val, &ds.splits.test}) {
    std::sort(split->begin(), split->end());
  }
  ds.validate();
  return ds;
}

}  // namespace hyperbert
