#include "smprompt/config.hpp"

#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "smprompt/error.hpp"

namespace smprompt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::set<std::string>> kSchema = {
    {"task",
     {"name", "labels", "label_codes", "sentence_pair", "header", "delimiter", "columns", "pool", "test",
      "annotations"}},
    {"template", {"notation", "meta", "meta_parts"}},
    {"depfilter", {"filter", "max_tokens", "catalog", "candidates"}},
    {"mapping", {"mappings", "library", "shared_head", "identity_head", "train_head"}},
    {"lm", {"backend", "vocabulary", "lowercase", "tiny", "remote"}},
    {"harness",
     {"k", "seeds", "batch_sizes", "learning_rates", "max_steps", "eval_every", "train_backbone", "optimizer",
      "weight_decay", "head_lr_scale", "selection", "parallelism"}},
    {"k_sweep", {"ks", "batch_size", "learning_rate", "max_steps"}},
    {"output", {"dir"}},
};

void check_keys(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [section, body] : doc.items()) {
    auto it = kSchema.find(section);
    if (it == kSchema.end()) throw ValidationError("unknown config section '" + section + "'");
    if (!body.is_object()) throw ValidationError("config section '" + section + "' must be an object");
    for (const auto& [key, _] : body.items())
      if (!it->second.count(key)) throw ValidationError("unknown config key '" + section + "." + key + "'");
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (node->is_null()) *node = json::object();
    if (!node->is_object()) throw ValidationError("override key '" + key + "' descends into a non-object");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

// Typed access with the dotted key in every error message.
class Reader {
 public:
  Reader(const json& doc, fs::path base) : doc_(doc), base_(std::move(base)) {}

  const json* find(const std::string& section, const std::string& key) const {
    auto s = doc_.find(section);
    if (s == doc_.end()) return nullptr;
    auto k = s->find(key);
    return k == s->end() ? nullptr : &*k;
  }

  template <typename T>
  T get(const std::string& section, const std::string& key, T fallback) const {
    const json* v = find(section, key);
    if (!v) return fallback;
    try {
      return v->get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config key '" + section + "." + key + "' has the wrong type");
    }
  }

  template <typename T>
  T required(const std::string& section, const std::string& key) const {
    if (!find(section, key)) throw ValidationError("config key '" + section + "." + key + "' is required");
    return get<T>(section, key, T{});
  }

  fs::path path(const std::string& value) const {
    fs::path p(value);
    return p.is_absolute() ? p : base_ / p;
  }

 private:
  const json& doc_;
  fs::path base_;
};

std::vector<fs::path> annotation_paths(const Reader& r, const std::string& split) {
  std::vector<fs::path> out;
  const json* a = r.find("task", "annotations");
  if (!a) return out;
  if (!a->is_object()) throw ValidationError("config key 'task.annotations' must be an object");
  auto it = a->find(split);
  if (it == a->end()) return out;
  try {
    for (const auto& p : it->get<std::vector<std::string>>()) out.push_back(r.path(p));
  } catch (const json::exception&) {
    throw ValidationError("config key 'task.annotations." + split + "' must be a list of paths");
  }
  return out;
}

lm::OptimizerConfig::Kind parse_optimizer(const std::string& name) {
  if (name == "adamw") return lm::OptimizerConfig::Kind::AdamW;
  if (name == "sgd") return lm::OptimizerConfig::Kind::Sgd;
  throw ValidationError("harness.optimizer must be 'adamw' or 'sgd', got '" + name + "'");
}

FilterCatalog load_catalog(const Reader& r) {
  const auto name = r.get<std::string>("depfilter", "catalog", "standard");
  if (name == "standard") return FilterCatalog::standard();
  if (name == "core") return FilterCatalog::core();
  return FilterCatalog::load(r.path(name));
}

std::vector<std::string> split_texts(const std::vector<Example>& examples) {
  std::vector<std::string> out;
  for (const auto& e : examples) {
    out.push_back(e.sent0);
    if (e.sent1) out.push_back(*e.sent1);
  }
  return out;
}

}  // namespace

Settings load_settings(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ValidationError("config file is not valid JSON: " + path.string());
  for (const auto& o : overrides) apply_override(doc, o);
  check_keys(doc);

  Settings s;
  s.source = path;
  const Reader r(doc, path.has_parent_path() ? path.parent_path() : fs::path("."));

  auto& t = s.task;
  t.schema.name = r.required<std::string>("task", "name");
  t.schema.labels = LabelSet(r.required<std::vector<std::string>>("task", "labels"));
  t.schema.label_codes = r.get<std::vector<std::string>>("task", "label_codes", {});
  t.schema.sentence_pair = r.get<bool>("task", "sentence_pair", false);
  t.schema.header = r.get<bool>("task", "header", false);
  const auto delim = r.get<std::string>("task", "delimiter", "\t");
  if (delim.size() != 1) throw ValidationError("config key 'task.delimiter' must be one character");
  t.schema.delimiter = delim[0];
  if (const json* c = r.find("task", "columns")) {
    if (!c->is_object()) throw ValidationError("config key 'task.columns' must be an object");
    for (const auto& [k, v] : c->items()) {
      if (!v.is_number_integer()) throw ValidationError("config key 'task.columns." + k + "' must be an integer");
      const int col = v.get<int>();
      if (k == "sent0") t.schema.sent0_column = col;
      else if (k == "sent1") t.schema.sent1_column = col;
      else if (k == "label") t.schema.label_column = col;
      else if (k == "id") t.schema.id_column = col;
      else throw ValidationError("unknown config key 'task.columns." + k + "'");
    }
  }
  if (t.schema.sentence_pair && t.schema.sent1_column < 0) {
    t.schema.sent1_column = 1;
    t.schema.label_column = 2;
  }
  t.pool = r.path(r.required<std::string>("task", "pool"));
  t.test = r.path(r.required<std::string>("task", "test"));
  t.pool_annotations = annotation_paths(r, "pool");
  t.test_annotations = annotation_paths(r, "test");

  auto& e = s.experiment;
  e.task = t.schema.name;
  e.prompt.notation = r.required<std::string>("template", "notation");
  if (const json* m = r.find("template", "meta")) {
    MetaPrompt meta;
    try {
      meta.od = m->value("od", "");
      meta.sd = m->value("sd", "");
      meta.td = m->value("td", "");
    } catch (const json::exception&) {
      throw ValidationError("config key 'template.meta' must hold od/sd/td strings");
    }
    std::set<MetaKind> parts;
    for (const auto& p : r.get<std::vector<std::string>>("template", "meta_parts", {"OD", "SD", "TD"}))
      parts.insert(parse_meta_kind(p));
    e.prompt.meta = compose_meta(meta, parts);
  }
  e.prompt.catalog = load_catalog(r);
  if (auto f = r.get<std::string>("depfilter", "filter", ""); !f.empty()) e.prompt.filter = Filter::parse(f);
  e.prompt.max_snippet_tokens = r.get<int>("depfilter", "max_tokens", kDefaultSnippetTokens);
  for (const auto& c : r.get<std::vector<std::string>>("depfilter", "candidates", {}))
    s.candidates.push_back(Filter::parse(c));

  const json* maps = r.find("mapping", "mappings");
  if (!maps || !maps->is_array() || maps->empty())
    throw ValidationError("config key 'mapping.mappings' must be a non-empty list");
  json library = json::object();
  if (auto lib = r.get<std::string>("mapping", "library", ""); !lib.empty()) {
    std::ifstream lin(r.path(lib));
    if (!lin) throw ValidationError("cannot open mapping library: " + r.path(lib).string());
    library = json::parse(lin, nullptr, false);
    if (!library.is_object()) throw ValidationError("mapping library is not a JSON object: " + r.path(lib).string());
  }
  for (const auto& m : *maps) {
    if (m.is_string()) {
      const auto name = m.get<std::string>();
      auto it = library.find(name);
      if (it == library.end()) throw ValidationError("mapping '" + name + "' is not in the mapping library");
      try {
        e.mapping.mappings.emplace_back(name, it->get<std::vector<std::vector<std::string>>>());
      } catch (const json::exception&) {
        throw ValidationError("library mapping '" + name + "' must be a list of per-label word lists");
      }
      continue;
    }
    try {
      e.mapping.mappings.emplace_back(m.at("name").get<std::string>(),
                                      m.at("words").get<std::vector<std::vector<std::string>>>());
    } catch (const json::exception&) {
      throw ValidationError("each entry of 'mapping.mappings' needs a name and per-label word lists");
    }
  }
  e.mapping.shared_head = r.get<bool>("mapping", "shared_head", false);
  e.mapping.identity_head = r.get<bool>("mapping", "identity_head", false);
  e.mapping.train_head = r.get<bool>("mapping", "train_head", true);

  e.k = r.get<int>("harness", "k", e.k);
  e.seeds = r.get<std::vector<std::uint64_t>>("harness", "seeds", e.seeds);
  e.batch_sizes = r.get<std::vector<int>>("harness", "batch_sizes", e.batch_sizes);
  e.learning_rates = r.get<std::vector<double>>("harness", "learning_rates", e.learning_rates);
  e.training.max_steps = r.get<int>("harness", "max_steps", e.training.max_steps);
  e.training.eval_every = r.get<int>("harness", "eval_every", e.training.eval_every);
  e.training.train_backbone = r.get<bool>("harness", "train_backbone", true);
  e.training.optimizer = parse_optimizer(r.get<std::string>("harness", "optimizer", "adamw"));
  e.training.weight_decay = r.get<double>("harness", "weight_decay", 0.0);
  e.training.head_lr_scale = r.get<double>("harness", "head_lr_scale", 1.0);
  const auto selection = r.get<std::string>("harness", "selection", "dev");
  if (selection != "dev" && selection != "test")
    throw ValidationError("harness.selection must be 'dev' or 'test', got '" + selection + "'");
  e.selection = selection == "dev" ? Selection::Dev : Selection::Test;
  e.parallelism = r.get<int>("harness", "parallelism", 1);

  s.ks = r.get<std::vector<int>>("k_sweep", "ks", s.ks);
  e.sweep.batch_size = r.get<int>("k_sweep", "batch_size", e.sweep.batch_size);
  e.sweep.learning_rate = r.get<double>("k_sweep", "learning_rate", e.sweep.learning_rate);
  e.sweep.max_steps = r.get<int>("k_sweep", "max_steps", e.sweep.max_steps);

  auto& b = s.backend;
  b.kind = r.get<std::string>("lm", "backend", "tiny");
  if (b.kind != "tiny" && b.kind != "remote")
    throw ValidationError("lm.backend must be 'tiny' or 'remote', got '" + b.kind + "'");
  if (auto v = r.get<std::string>("lm", "vocabulary", ""); !v.empty()) s.vocabulary = r.path(v);
  s.lowercase = r.get<bool>("lm", "lowercase", true);
  if (const json* tiny = r.find("lm", "tiny")) {
    try {
      for (const auto& [k, v] : tiny->items()) {
        if (k == "dim") b.tiny.dim = v.get<int>();
        else if (k == "layers") b.tiny.layers = v.get<int>();
        else if (k == "ff_dim") b.tiny.ff_dim = v.get<int>();
        else if (k == "max_length") b.tiny.max_length = v.get<std::size_t>();
        else if (k == "seed") b.tiny.seed = v.get<std::uint64_t>();
        else if (k == "init_std") b.tiny.init_std = v.get<double>();
        else if (k == "checkpoint") b.checkpoint = r.path(v.get<std::string>());
        else throw ValidationError("unknown config key 'lm.tiny." + k + "'");
      }
    } catch (const json::exception&) {
      throw ValidationError("config section 'lm.tiny' has a value of the wrong type");
    }
  }
  if (const json* remote = r.find("lm", "remote")) {
    try {
      for (const auto& [k, v] : remote->items()) {
        if (k == "host") b.endpoint.host = v.get<std::string>();
        else if (k == "port") b.endpoint.port = v.get<int>();
        else if (k == "max_in_flight") b.remote.max_in_flight = v.get<int>();
        else if (k == "attempts") b.remote.attempts = v.get<int>();
        else if (k == "timeout_seconds") b.remote.timeout_seconds = v.get<double>();
        else throw ValidationError("unknown config key 'lm.remote." + k + "'");
      }
    } catch (const json::exception&) {
      throw ValidationError("config section 'lm.remote' has a value of the wrong type");
    }
  }

  s.output_dir = r.path(r.get<std::string>("output", "dir", "out"));
  e.validate();
  return s;
}

TaskData load_task(const TaskFiles& files) {
  TaskData d;
  d.name = files.schema.name;
  d.labels = files.schema.labels;
  auto schema = files.schema;
  schema.name = files.schema.name + "-pool";
  d.pool = parse_dataset(files.pool, schema).examples;
  schema.name = files.schema.name + "-test";
  d.test = parse_dataset(files.test, schema).examples;

  auto index = [&](const std::vector<Example>& examples, const std::vector<fs::path>& paths) {
    if (paths.empty()) return;
    if (paths.size() > 2) throw ValidationError("at most two annotation files per split");
    const auto sent0 = parse_conllu(paths[0]);
    std::optional<std::vector<AnnotatedSentence>> sent1;
    if (paths.size() == 2) sent1 = parse_conllu(paths[1]);
    for (auto& [id, p] : align_parses(examples, sent0, sent1 ? &*sent1 : nullptr)) d.parses[id] = std::move(p);
  };
  index(d.pool, files.pool_annotations);
  index(d.test, files.test_annotations);
  return d;
}

Workspace open_workspace(const Settings& s) {
  Workspace w;
  w.data = load_task(s.task);
  if (s.vocabulary) {
    w.tokenizer = std::make_unique<Tokenizer>(Tokenizer::load(*s.vocabulary, s.lowercase));
  } else {
    auto texts = split_texts(w.data.pool);
    for (auto& t : split_texts(w.data.test)) texts.push_back(std::move(t));
    std::vector<std::string> extra;
    for (const auto& seg : parse_template(s.experiment.prompt.notation).segments)
      if (auto lit = std::get_if<segment::Literal>(&seg)) extra.push_back(lit->text);
    if (const auto& m = s.experiment.prompt.meta) extra.insert(extra.end(), {m->od, m->sd, m->td});
    for (const auto& [_, words] : s.experiment.mapping.mappings)
      for (const auto& label : words) extra.insert(extra.end(), label.begin(), label.end());
    w.tokenizer = std::make_unique<Tokenizer>(Tokenizer::build(texts, extra, s.lowercase));
  }

  if (s.backend.kind == "tiny") {
    if (s.backend.checkpoint) {
      auto model = std::make_unique<lm::TinyMlm>(lm::TinyMlm::load(*s.backend.checkpoint));
      if (model->vocab_size() != w.tokenizer->size())
        throw ValidationError("checkpoint vocabulary (" + std::to_string(model->vocab_size()) +
                              ") does not match the tokenizer (" + std::to_string(w.tokenizer->size()) + ")");
      w.backend = std::move(model);
    } else {
      auto cfg = s.backend.tiny;
      cfg.vocab_size = w.tokenizer->size();
      w.backend = std::make_unique<lm::TinyMlm>(cfg);
    }
  } else {
    w.backend = std::make_unique<lm::RemoteBackend>(s.backend.endpoint, s.backend.remote);
  }
  return w;
}

}  // namespace smprompt
