#include "flowplan/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flowplan/errors.hpp"

namespace flowplan {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blocks are written in native little-endian order");

namespace {

constexpr std::string_view kMagic = "FLOWPLAN-CKPT 1\n";

void append_doubles(std::string& out, const std::vector<double>& values) {
  const auto* p = reinterpret_cast<const char*>(values.data());
  out.append(p, values.size() * sizeof(double));
}

std::vector<double> read_doubles(const std::string& bytes, std::size_t& offset, std::size_t n) {
  if (offset + n * sizeof(double) > bytes.size())
    throw ValidationError("checkpoint truncated in tensor data");
  std::vector<double> out(n);
  std::memcpy(out.data(), bytes.data() + offset, n * sizeof(double));
  offset += n * sizeof(double);
  return out;
}

json report_json(const LossReport& r) { return json::parse(r.to_json_line()); }

LossReport report_from(const json& j) {
  LossReport r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.items = j.at("items").get<std::size_t>();
  r.total = j.at("total").get<double>();
  r.kl_global = j.at("kl_global").get<double>();
  r.kl_global_thresholded = j.at("kl_global_thresholded").get<double>();
  r.act_nll = j.at("act_nll").get<double>();
  r.kl_local = j.at("kl_local").get<double>();
  r.kl_local_thresholded = j.at("kl_local_thresholded").get<double>();
  r.token_nll = j.at("token_nll").get<double>();
  return r;
}

}  // namespace

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string Checkpoint::hash() const { return to_hex(model().fingerprint()); }

std::string serialize_checkpoint(const Checkpoint& ck) {
  const Model& model = ck.model();
  json header;
  header["config"] = json::parse(train_config_to_json(ck.state.config));
  header["vocabulary"] = model.vocab().tokens();
  header["vocab_hash"] = to_hex(model.vocab().hash());
  header["params"] = json::array();
  for (const auto& e : model.params().entries())
    header["params"].push_back(
        {{"name", e.name}, {"rows", e.tensor.rows()}, {"cols", e.tensor.cols()}});
  const bool moments = !ck.state.optimizer.m.empty();
  header["optimizer"] = {{"step", ck.state.optimizer.step}, {"moments", moments}};
  header["epoch"] = ck.state.epoch;
  header["rng_state"] = ck.state.rng_state;
  header["charts"] = json::array();
  for (const auto& c : ck.charts) header["charts"].push_back(json::parse(save_flowchart(c)));
  header["corpus_size"] = ck.corpus_size;
  header["reports"] = json::array();
  for (const auto& r : ck.state.reports) header["reports"].push_back(report_json(r));

  const std::string head = header.dump();
  std::string out(kMagic);
  const std::uint64_t len = head.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += head;
  for (const auto& e : model.params().entries()) append_doubles(out, e.tensor.value());
  if (moments) {
    for (const auto& m : ck.state.optimizer.m) append_doubles(out, m);
    for (const auto& v : ck.state.optimizer.v) append_doubles(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.compare(0, kMagic.size(), kMagic) != 0)
    throw ValidationError("not a flowplan checkpoint (bad magic)");
  std::size_t offset = kMagic.size();
  std::uint64_t len = 0;
  if (bytes.size() < offset + sizeof len) throw ValidationError("checkpoint truncated in header");
  std::memcpy(&len, bytes.data() + offset, sizeof len);
  offset += sizeof len;
  if (bytes.size() < offset + len) throw ValidationError("checkpoint truncated in header");
  json header;
  try {
    header = json::parse(bytes.substr(offset, len));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  offset += len;

  Checkpoint ck;
  ck.state.config = train_config_from_json(header.at("config").dump());
  Vocabulary vocab = Vocabulary::from_tokens(header.at("vocabulary").get<std::vector<std::string>>());
  if (to_hex(vocab.hash()) != header.at("vocab_hash").get<std::string>())
    throw ValidationError("checkpoint vocabulary hash mismatch");
  ck.state.model = std::make_unique<Model>(ck.state.config.model_config(), std::move(vocab));
  auto& params = ck.state.model->params();
  const auto& manifest = header.at("params");
  if (manifest.size() != params.entries().size())
    throw ValidationError("checkpoint parameter manifest does not match the model layout");
  std::vector<std::vector<double>> values;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = params.entries()[i];
    if (manifest[i].at("name") != e.name || manifest[i].at("rows") != e.tensor.rows() ||
        manifest[i].at("cols") != e.tensor.cols())
      throw ValidationError("checkpoint parameter '" + manifest[i].at("name").get<std::string>() +
                            "' does not match the model layout");
    values.push_back(read_doubles(bytes, offset, e.tensor.size()));
  }
  params.assign(values);

  ck.state.optimizer.step = header.at("optimizer").at("step").get<std::size_t>();
  if (header.at("optimizer").at("moments").get<bool>()) {
    for (const auto& e : params.entries())
      ck.state.optimizer.m.push_back(read_doubles(bytes, offset, e.tensor.size()));
    for (const auto& e : params.entries())
      ck.state.optimizer.v.push_back(read_doubles(bytes, offset, e.tensor.size()));
  }
  if (offset != bytes.size()) throw ValidationError("checkpoint has trailing bytes");
  ck.state.epoch = header.at("epoch").get<std::size_t>();
  ck.state.rng_state = header.at("rng_state").get<std::string>();
  for (const auto& c : header.at("charts")) ck.charts.push_back(load_flowchart(c.dump()));
  ck.corpus_size = header.at("corpus_size").get<std::size_t>();
  for (const auto& r : header.at("reports")) ck.state.reports.push_back(report_from(r));
  return ck;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return deserialize_checkpoint(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace flowplan
