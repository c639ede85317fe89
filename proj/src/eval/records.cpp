#include "rfd/eval/records.hpp"

#include <sstream>

#include "rfd/io/encoding.hpp"
#include "rfd/io/files.hpp"

namespace rfd::eval {

using nlohmann::json;

namespace {

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"f64", io::encode_f64s(t.data())}};
}

Tensor tensor_from_json(const json& j) {
  auto shape = j.at("shape").get<Shape>();
  auto data = io::decode_f64s(j.at("f64").get<std::string>());
  if (numel(shape) != data.size()) {
    throw io::FormatError("tensor of shape " + to_string(shape) + " carries " + std::to_string(data.size()) +
                          " values");
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

json record_to_json(const Record& r) {
  const auto& a = r.result;
  json j{
      {"type", "result"},
      {"model", r.model},
      {"source", r.source},
      {"example", r.example},
      {"attack", a.attack},
      {"true_label", a.true_label},
      {"target", a.target ? json(*a.target) : json(nullptr)},
      {"predicted", a.predicted},
      {"success", a.success},
      {"l2", a.l2},
      {"l2_squared", a.l2_squared},
      {"queries", a.queries},
      {"seconds", a.seconds},
      {"budget_exhausted", a.budget_exhausted},
      {"error", r.error},
      {"structural", r.structural},
      {"original", tensor_to_json(a.original)},
      {"adversarial", tensor_to_json(a.adversarial)},
  };
  return j;
}

Record record_from_json(const json& j) {
  try {
    if (j.at("type") != "result") throw io::FormatError("not a result record");
    Record r;
    r.model = j.at("model").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.example = j.at("example").get<std::size_t>();
    r.error = j.at("error").get<bool>();
    r.structural = j.at("structural").get<bool>();
    auto& a = r.result;
    a.attack = j.at("attack").get<std::string>();
    a.true_label = j.at("true_label").get<int>();
    if (!j.at("target").is_null()) a.target = j.at("target").get<int>();
    a.predicted = j.at("predicted").get<int>();
    a.success = j.at("success").get<bool>();
    a.l2 = j.at("l2").get<double>();
    a.l2_squared = j.at("l2_squared").get<double>();
    a.queries = j.at("queries").get<std::size_t>();
    a.seconds = j.at("seconds").get<double>();
    a.budget_exhausted = j.at("budget_exhausted").get<bool>();
    a.original = tensor_from_json(j.at("original"));
    a.adversarial = tensor_from_json(j.at("adversarial"));
    if (a.original.shape() != a.adversarial.shape()) throw io::FormatError("original/adversarial shape mismatch");
    return r;
  } catch (const json::exception& e) {
    throw io::FormatError(std::string("bad result record: ") + e.what());
  }
}

std::string encode_stream(const Stream& s) {
  json header = s.header;
  header["type"] = "header";
  header["schema"] = kStreamSchema;
  std::string out = header.dump() + "\n";
  for (const auto& r : s.records) out += record_to_json(r).dump() + "\n";
  return out;
}

Stream decode_stream(std::string_view text) {
  Stream s;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw io::FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!have_header) {
      if (!j.is_object() || j.value("type", "") != "header")
        throw io::FormatError("line " + std::to_string(lineno) + ": expected the stream header");
      if (j.value("schema", 0) != kStreamSchema)
        throw io::FormatError("unsupported stream schema " + j.value("schema", json()).dump());
      s.header = std::move(j);
      have_header = true;
      continue;
    }
    try {
      s.records.push_back(record_from_json(j));
    } catch (const io::FormatError& e) {
      throw io::FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return s;
}

void write_stream(const std::filesystem::path& path, const Stream& s) { io::write_file_atomic(path, encode_stream(s)); }

Stream read_stream(const std::filesystem::path& path) { return decode_stream(io::read_file(path)); }

}  // namespace rfd::eval
