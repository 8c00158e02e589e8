#include "cwt/dataset_io.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "cwt/config.hpp"

namespace cwt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kSampleMagic[4] = {'S', 'E', 'G', '1'};

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t take_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw ConfigError("dataset: truncated sample header");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

std::string sample_file(const SegSample& s) {
  std::ostringstream name;
  name << class_dir_name(s.primary_class) << "/" << std::setw(6) << std::setfill('0') << s.id << ".seg";
  return name.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string class_dir_name(int class_id) {
  std::ostringstream name;
  name << "class_" << std::setw(2) << std::setfill('0') << class_id;
  return name.str();
}

void export_dataset(const Dataset& dataset, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create '" + dir + "': " + ec.message());
  for (int c : dataset.class_ids()) fs::create_directories(fs::path(dir) / class_dir_name(c));

  json samples = json::array();
  for (const auto& s : dataset.samples) {
    const std::size_t channels = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
    std::string bytes(kSampleMagic, 4);
    put_u32(bytes, static_cast<std::uint32_t>(h));
    put_u32(bytes, static_cast<std::uint32_t>(w));
    put_u32(bytes, static_cast<std::uint32_t>(channels));
    for (double v : s.image.data()) {
      const float f = static_cast<float>(v);
      bytes.append(reinterpret_cast<const char*>(&f), 4);
    }
    bytes.append(reinterpret_cast<const char*>(s.mask.labels.data()), s.mask.labels.size());
    const std::string file = sample_file(s);
    write_file(fs::path(dir) / file, bytes);
    samples.push_back({{"id", s.id}, {"primary_class", s.primary_class}, {"file", file}});
  }
  const json manifest = {{"format", "SEG1"},
                         {"seed", dataset.spec.seed},
                         {"spec", dataset_to_json(dataset.spec)},
                         {"samples", samples}};
  write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
}

Dataset import_dataset(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(fs::path(dir) / "manifest.json"));
  } catch (const json::exception& e) {
    throw ConfigError("dataset: malformed manifest in '" + dir + "': " + e.what());
  }
  Dataset d;
  d.spec = dataset_from_json(manifest.at("spec"), DatasetSpec{});
  for (const auto& entry : manifest.at("samples")) {
    const std::string bytes = read_file(fs::path(dir) / entry.at("file").get<std::string>());
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kSampleMagic, 4) != 0) {
      throw ConfigError("dataset: bad sample magic in " + entry.at("file").get<std::string>());
    }
    std::size_t pos = 4;
    const std::size_t h = take_u32(bytes, pos), w = take_u32(bytes, pos), channels = take_u32(bytes, pos);
    if (bytes.size() != pos + 4 * channels * h * w + h * w) {
      throw ConfigError("dataset: sample " + entry.at("file").get<std::string>() + " has the wrong size");
    }
    SegSample s;
    s.id = entry.at("id").get<std::size_t>();
    s.primary_class = entry.at("primary_class").get<int>();
    std::vector<double> image(channels * h * w);
    for (double& v : image) {
      float f;
      std::memcpy(&f, bytes.data() + pos, 4);
      pos += 4;
      v = f;
    }
    s.image = Tensor({channels, h, w}, std::move(image));
    s.mask.height = h;
    s.mask.width = w;
    s.mask.labels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    for (std::uint8_t l : s.mask.labels) {
      if (l && !std::count(s.class_set.begin(), s.class_set.end(), l)) s.class_set.push_back(l);
    }
    std::sort(s.class_set.begin(), s.class_set.end());
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace cwt
