#include "duel/data/dataset.hpp"

#include <cctype>

#include "duel/error.hpp"
#include "duel/util/kv.hpp"

namespace duel::data {

std::vector<std::string> tokens(std::string_view text) { return util::split_whitespace(text); }

Dataset parse_tsv(std::string_view text, std::string name) {
  if (name.empty()) throw InputError("dataset name must be nonempty");
  Dataset ds{std::move(name), {}};
  int lineno = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (util::trim(line).empty()) continue;
    const auto fields = util::split(line, '\t');
    if (fields.size() < 2 || fields.size() > 3) {
      throw InputError(ds.name + ":" + std::to_string(lineno) + ": expected 2 or 3 tab-separated fields, got " +
                       std::to_string(fields.size()));
    }
    Example ex{util::trim(fields[0]), util::trim(fields[1]), std::nullopt};
    if (ex.input.empty() || ex.output.empty()) {
      throw InputError(ds.name + ":" + std::to_string(lineno) + ": empty input or output");
    }
    if (fields.size() == 3) {
      auto cat = util::trim(fields[2]);
      if (!cat.empty()) ex.category = std::move(cat);
    }
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) throw InputError(ds.name + ": no examples");
  return ds;
}

Dataset load_tsv(const std::filesystem::path& path) { return load_tsv(path, path.stem().string()); }

Dataset load_tsv(const std::filesystem::path& path, std::string name) {
  return parse_tsv(util::read_file(path.string()), std::move(name));
}

std::string to_tsv(const Dataset& dataset) {
  std::string out;
  for (const auto& ex : dataset.examples) {
    out += ex.input;
    out += '\t';
    out += ex.output;
    if (ex.category) {
      out += '\t';
      out += *ex.category;
    }
    out += '\n';
  }
  return out;
}

void save_tsv(const std::filesystem::path& path, const Dataset& dataset) {
  util::write_file(path.string(), to_tsv(dataset));
}

Dataset apply_prompt(const Dataset& dataset, std::string_view tag) {
  if (tag.empty()) throw InputError("prompt tag must be nonempty");
  for (char c : tag) {
    if (std::isspace(static_cast<unsigned char>(c))) throw InputError("prompt tag must not contain whitespace");
  }
  Dataset out{dataset.name, dataset.examples};
  const std::string prefix = std::string(tag) + ": ";
  for (auto& ex : out.examples) ex.input = prefix + ex.input;
  return out;
}

Dataset concat(std::string name, const std::vector<const Dataset*>& parts) {
  Dataset out{std::move(name), {}};
  for (const auto* p : parts) out.examples.insert(out.examples.end(), p->examples.begin(), p->examples.end());
  return out;
}

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices, std::string name) {
  Dataset out{std::move(name), {}};
  out.examples.reserve(indices.size());
  for (auto i : indices) {
    if (i >= dataset.size()) throw InputError("subset index " + std::to_string(i) + " out of range");
    out.examples.push_back(dataset.examples[i]);
  }
  return out;
}

}  // namespace duel::data
