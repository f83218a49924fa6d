#include "birr/data.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "birr/errors.hpp"
#include "birr/image.hpp"
#include "birr/io.hpp"
#include "birr/random.hpp"

namespace birr {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> sorted_children(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

DatasetManifest scan_dataset(const fs::path& root, const LabelTable& labels) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  DatasetManifest m;
  m.root = root;
  m.class_counts.assign(labels.size(), 0);
  for (const auto& dir : sorted_children(root)) {
    const std::string name = dir.filename().string();
    if (!fs::is_directory(dir)) {
      m.warnings.push_back("ignored non-directory " + name);
      continue;
    }
    const auto id = labels.find(name);
    if (!id) {
      m.warnings.push_back("skipped unknown class directory " + name);
      continue;
    }
    for (const auto& file : sorted_children(dir)) {
      if (!fs::is_regular_file(file)) continue;
      const std::string rel = name + "/" + file.filename().string();
      try {
        read_image(file);
      } catch (const UnsupportedFormatError&) {
        m.rejected.push_back(rel);
        continue;
      } catch (const DecodeError&) {
        m.rejected.push_back(rel);
        continue;
      }
      m.entries.push_back({rel, *id});
      ++m.class_counts[static_cast<std::size_t>(*id)];
    }
  }
  if (m.entries.empty()) throw DataError("no decodable images under " + root.string());
  return m;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split tag '" + text + "'");
}

SplitManifest split_dataset(const DatasetManifest& manifest, const SplitFractions& fractions,
                            std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split fractions sum to " + shortest(sum) + ", expected 1");
  }

  std::map<int, std::vector<ManifestEntry>> by_class;
  for (const auto& e : manifest.entries) by_class[e.class_id].push_back(e);
  for (const auto& [id, items] : by_class) {
    if (items.size() < 3) {
      throw DataError("class " + std::to_string(id) + " has " + std::to_string(items.size()) +
                      " images; at least 3 are needed to populate every split");
    }
  }

  // Largest-remainder apportionment of the grand total.
  const auto total = static_cast<double>(manifest.entries.size());
  std::array<long, 3> global{};
  std::array<double, 3> global_rem{};
  long assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = fractions[k] * total;
    global[k] = static_cast<long>(std::floor(exact + 1e-9));
    global_rem[k] = exact - static_cast<double>(global[k]);
    assigned += global[k];
  }
  for (long left = static_cast<long>(total) - assigned; left > 0; --left) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (global_rem[k] > global_rem[best]) best = k;
    ++global[best];
    global_rem[best] = -1.0;
  }

  // Per-class floors, then the deficits left for the per-class extras.
  std::map<int, std::array<long, 3>> quota;
  std::map<int, std::array<double, 3>> rem;
  std::array<long, 3> deficit = global;
  for (const auto& [id, items] : by_class) {
    const auto n = static_cast<double>(items.size());
    for (std::size_t k = 0; k < 3; ++k) {
      const double exact = fractions[k] * n;
      quota[id][k] = static_cast<long>(std::floor(exact + 1e-9));
      rem[id][k] = exact - static_cast<double>(quota[id][k]);
      deficit[k] -= quota[id][k];
    }
  }
  for (const auto& [id, items] : by_class) {
    auto& q = quota[id];
    long extras = static_cast<long>(items.size()) - (q[0] + q[1] + q[2]);
    std::array<bool, 3> used{};
    for (; extras > 0; --extras) {
      std::size_t best = 3;
      for (std::size_t k = 0; k < 3; ++k) {
        if (used[k] || fractions[k] == 0.0) continue;
        if (best == 3 || deficit[k] > deficit[best] ||
            (deficit[k] == deficit[best] && rem[id][k] > rem[id][best])) {
          best = k;
        }
      }
      ++q[best];
      --deficit[best];
      used[best] = true;
    }
  }

  SplitManifest out;
  out.root = manifest.root;
  out.seed = seed;
  out.fractions = fractions;
  for (auto& [id, items] : by_class) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(id)));
    shuffle(std::span<ManifestEntry>(items), rng);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      for (long i = 0; i < quota[id][k]; ++i) out.parts[k].push_back(items[pos++]);
    }
  }
  for (auto& part : out.parts) {
    std::sort(part.begin(), part.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  }
  return out;
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream os;
  os << "# birr manifest\n# root\t" << manifest.root.generic_string() << "\n";
  for (const auto& e : manifest.entries) os << e.path << '\t' << e.class_id << "\tall\n";
  return os.str();
}

std::string format_split(const SplitManifest& split) {
  std::ostringstream os;
  os << "# birr split\n# root\t" << split.root.generic_string() << "\n# seed\t" << split.seed
     << "\n# fractions\t" << shortest(split.fractions[0]) << '\t' << shortest(split.fractions[1])
     << '\t' << shortest(split.fractions[2]) << "\n";
  for (std::size_t k = 0; k < 3; ++k) {
    for (const auto& e : split.parts[k]) {
      os << e.path << '\t' << e.class_id << '\t' << to_string(static_cast<Split>(k)) << '\n';
    }
  }
  return os.str();
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  write_text(path, format_manifest(manifest));
}

void save_split(const SplitManifest& split, const fs::path& path) {
  write_text(path, format_split(split));
}

SplitManifest load_split(const fs::path& path) {
  std::istringstream in(read_text(path));
  SplitManifest out;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (line[0] == '#') {
      if (fields[0] == "# root" && fields.size() == 2) {
        out.root = fields[1];
      } else if (fields[0] == "# seed" && fields.size() == 2) {
        out.seed = std::stoull(fields[1]);
      } else if (fields[0] == "# fractions" && fields.size() == 4) {
        for (std::size_t k = 0; k < 3; ++k) out.fractions[k] = std::stod(fields[k + 1]);
      }
      continue;
    }
    if (fields.size() != 3) fail("expected path, class id and split tag");
    int id = 0;
    const auto& f = fields[1];
    if (std::from_chars(f.data(), f.data() + f.size(), id).ec != std::errc{}) fail("bad class id");
    Split s;
    try {
      s = parse_split(fields[2]);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
    out[s].push_back({fields[0], id});
  }
  // Relative roots are resolved against the split file's directory.
  if (out.root.is_relative()) out.root = path.parent_path() / out.root;
  return out;
}

namespace {

struct Rgb {
  int r, g, b;
};

constexpr Rgb kPalette[] = {{150, 95, 60}, {200, 60, 60}, {230, 150, 40}, {60, 90, 190}, {70, 160, 90}};

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
}

ImageBuffer synth_note(std::size_t class_index, int size, Rng& rng) {
  const Rgb base = kPalette[class_index % std::size(kPalette)];
  const double brightness = uniform(rng, -15.0, 15.0);
  const int stripes = static_cast<int>(class_index) + 1;
  const double period = static_cast<double>(size) / stripes;
  const double phase = uniform(rng, 0.0, period);
  const double width = std::max(2.0, size / 16.0);
  ImageBuffer img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double pos = std::fmod(x + phase, period);
      const double shade = pos < width ? 0.45 : 1.0;
      const double noise = uniform(rng, -12.0, 12.0);
      img.at(x, y, 0) = clamp_byte(base.r * shade + brightness + noise);
      img.at(x, y, 1) = clamp_byte(base.g * shade + brightness + noise);
      img.at(x, y, 2) = clamp_byte(base.b * shade + brightness + noise);
    }
  }
  return img;
}

ImageBuffer synth_other(int size, Rng& rng) {
  auto color = [&] {
    return Rgb{static_cast<int>(uniform_index(rng, 256)), static_cast<int>(uniform_index(rng, 256)),
               static_cast<int>(uniform_index(rng, 256))};
  };
  const Rgb bg = color();
  ImageBuffer img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      img.at(x, y, 0) = static_cast<std::uint8_t>(bg.r);
      img.at(x, y, 1) = static_cast<std::uint8_t>(bg.g);
      img.at(x, y, 2) = static_cast<std::uint8_t>(bg.b);
    }
  const int shapes = 1 + static_cast<int>(uniform_index(rng, 4));
  for (int s = 0; s < shapes; ++s) {
    const Rgb c = color();
    const double cx = uniform(rng, 0, size);
    const double cy = uniform(rng, 0, size);
    const double rx = uniform(rng, size / 10.0, size / 3.0);
    const double ry = uniform(rng, size / 10.0, size / 3.0);
    const bool ellipse = uniform01(rng) < 0.5;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double u = (x + 0.5 - cx) / rx;
        const double v = (y + 0.5 - cy) / ry;
        const bool inside = ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
        if (!inside) continue;
        img.at(x, y, 0) = static_cast<std::uint8_t>(c.r);
        img.at(x, y, 1) = static_cast<std::uint8_t>(c.g);
        img.at(x, y, 2) = static_cast<std::uint8_t>(c.b);
      }
  }
  for (auto& p : img.pixels) p = clamp_byte(p + uniform(rng, -12.0, 12.0));
  return img;
}

}  // namespace

DatasetManifest synth_generate(const fs::path& out_root, const SynthOptions& options,
                               const LabelTable& labels) {
  if (options.per_class < 3) throw ConfigError("per_class must be at least 3");
  if (options.image_size < 8) throw ConfigError("synthetic image size must be at least 8");
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw IoError("cannot create " + out_root.string() + ": " + ec.message());
  std::size_t note_index = 0;
  for (const auto& label : labels.labels()) {
    const fs::path dir = out_root / label.code;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const bool other = label.code == LabelTable::kOtherCode;
    for (std::size_t i = 0; i < options.per_class; ++i) {
      Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(label.id), i));
      const ImageBuffer img =
          other ? synth_other(options.image_size, rng) : synth_note(note_index, options.image_size, rng);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04zu.png", label.code.c_str(), i);
      write_file(dir / name, encode_png(img));
    }
    if (!other) ++note_index;
  }
  return scan_dataset(out_root, labels);
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(run);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

BatchLoader::BatchLoader(fs::path root, std::vector<ManifestEntry> entries, Split split,
                         LoaderOptions options)
    : root_(std::move(root)), entries_(std::move(entries)), split_(split), options_(std::move(options)) {
  if (options_.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (options_.augment && options_.augment->enabled) {
    if (split_ != Split::kTrain) {
      throw UsageError("augmentation requested for the " + to_string(split_) + " split");
    }
    options_.augment->validate();
  }
}

std::size_t BatchLoader::batches_per_epoch() const {
  return (entries_.size() + options_.batch_size - 1) / options_.batch_size;
}

std::vector<std::size_t> BatchLoader::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(entries_.size());
  std::iota(order.begin(), order.end(), 0);
  if (options_.shuffle) {
    Rng rng(derive_seed(options_.shuffle_seed, epoch));
    shuffle(std::span<std::size_t>(order), rng);
  }
  return order;
}

Tensor BatchLoader::load_item(std::size_t item, std::size_t epoch) const {
  const fs::path path = root_ / entries_[item].path;
  ImageBuffer img;
  try {
    img = read_image(path);
  } catch (const std::exception& e) {
    throw ItemError(path.string(), e.what());
  }
  if (options_.augment && options_.augment->enabled) {
    Rng rng(derive_seed(options_.shuffle_seed ^ 0xA076'1D64'78BD'642FULL, epoch, item));
    img = apply_affine(img, sample_affine(*options_.augment, img.width, img.height, rng));
  }
  return preprocess(img, options_.resolution);
}

Batch BatchLoader::batch(std::size_t epoch, std::size_t index) const {
  if (index >= batches_per_epoch()) throw UsageError("batch index out of range");
  const auto order = epoch_order(epoch);
  const std::size_t begin = index * options_.batch_size;
  const std::size_t end = std::min(begin + options_.batch_size, order.size());
  Batch out;
  out.indices.assign(order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end));
  std::vector<Tensor> items(out.indices.size());
  parallel_for(items.size(), options_.workers,
               [&](std::size_t i) { items[i] = load_item(out.indices[i], epoch); });
  for (std::size_t i : out.indices) out.labels.push_back(entries_[i].class_id);
  out.images = stack_batch(std::span<const Tensor>(items));
  return out;
}

}  // namespace birr
