#include "oisa/checkpoint.hpp"

#include "oisa/error.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace oisa {

namespace {

constexpr const char* kMagic = "OISA-CKPT";

struct Header {
  nlohmann::json config;
  std::size_t tensors = 0;
};

Header read_header(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw DataError("not a checkpoint: " + path.string());
  if (!std::getline(in, line) || line != "version " + std::to_string(kCheckpointVersion))
    throw DataError("unsupported checkpoint version in " + path.string() + ": " + line);
  Header h;
  if (!std::getline(in, line)) throw DataError("truncated checkpoint: " + path.string());
  try {
    h.config = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint config in " + path.string() + ": " + e.what());
  }
  if (!std::getline(in, line) || line.rfind("tensors ", 0) != 0) throw DataError("truncated checkpoint: " + path.string());
  h.tensors = std::stoul(line.substr(8));
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const nn::ParamStore& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << kMagic << '\n' << "version " << kCheckpointVersion << '\n' << config.dump() << '\n';
  out << "tensors " << params.params().size() << '\n';
  for (const auto& p : params.params()) {
    const auto& m = p.var.value();
    out << p.name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

nlohmann::json read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  return read_header(in, path).config;
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, nn::ParamStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  const Header h = read_header(in, path);
  std::map<std::string, ag::Mat> tensors;
  for (std::size_t t = 0; t < h.tensors; ++t) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("truncated checkpoint: " + path.string());
    std::istringstream ls(line);
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(ls >> name >> rows >> cols)) throw DataError("corrupt tensor header in " + path.string());
    ag::Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw DataError("truncated tensor " + name + " in " + path.string());
    tensors.emplace(name, std::move(m));
  }
  if (tensors.size() != params.params().size())
    throw DataError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                    std::to_string(params.params().size()));
  for (const auto& p : params.params()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw DataError("checkpoint lacks tensor " + p.name);
    auto v = p.var;
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols())
      throw DataError("shape mismatch for tensor " + p.name);
    v.mutable_value() = it->second;
  }
  return h.config;
}

}  // namespace oisa
