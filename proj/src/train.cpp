#include "nrsc/train.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "nrsc/meshio.hpp"
#include "nrsc/rng.hpp"

namespace nrsc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TrainMode mode) {
    return mode == TrainMode::normal ? "normal" : "fixed_template";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "normal") return TrainMode::normal;
    if (s == "fixed_template") return TrainMode::fixed_template;
    throw InvalidInput("unknown train mode '" + s + "'");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidInput("config: batch_size must be >= 1");
    if (!(lr > 0)) throw InvalidInput("config: lr must be > 0");
    if (alpha < 0) throw InvalidInput("config: alpha must be >= 0");
    if (epochs < 0) throw InvalidInput("config: epochs must be >= 0");
    if (triplets_per_epoch < 1) throw InvalidInput("config: triplets_per_epoch must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1)) throw InvalidInput("config: beta1 must be in [0, 1)");
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw FileFormatError("config line " + std::to_string(line_no)
                                      + ": expected 'key = value'");
            continue;
        }
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "batch_size") cfg.batch_size = std::stoi(value);
            else if (key == "lr") cfg.lr = std::stod(value);
            else if (key == "beta1") cfg.beta1 = std::stod(value);
            else if (key == "epochs") cfg.epochs = std::stoi(value);
            else if (key == "triplets_per_epoch") cfg.triplets_per_epoch = std::stoi(value);
            else if (key == "alpha") cfg.alpha = std::stod(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "mode") cfg.mode = train_mode_from_string(value);
            else if (key == "template_subject_id") cfg.template_subject_id = std::stoi(value);
            else if (key == "differentiate_normals") {
                if (value == "true" || value == "1") cfg.differentiate_normals = true;
                else if (value == "false" || value == "0") cfg.differentiate_normals = false;
                else throw InvalidInput("bad bool");
            } else {
                throw FileFormatError("config line " + std::to_string(line_no)
                                      + ": unknown key '" + key + "'");
            }
        } catch (const FileFormatError&) {
            throw;
        } catch (const std::exception&) {
            throw FileFormatError("config line " + std::to_string(line_no) + ": bad value for '"
                                  + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig read_train_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileFormatError(path.string() + ": cannot open");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_train_config(buf.str());
}

// ---------------------------------------------------------------------------
// Sample preparation

Triplet substitute_template(Triplet t, const SkinnedTemplate& tmpl) {
    if (tmpl.mesh.vertex_count() != t.R.vertex_count())
        throw InvalidInput("substitute_template: template/shape vertex count mismatch");
    t.Q = tmpl.mesh;
    t.Q.vertices.normals = vertex_normals(t.Q);
    t.pose_id_q = -1;  // the constant template is not one of the subject's poses
    return t;
}

TrainSample prepare_sample(const Triplet& t, const TrainConfig& cfg) {
    TrainSample s;
    auto [p_centered, p_off] = center_at_origin(t.P);
    auto [q_centered, q_off] = center_at_origin(t.Q);
    auto [r_centered, r_off] = center_at_origin(t.R);

    s.faces = std::make_shared<const std::vector<std::array<int, 3>>>(q_centered.faces);
    s.in.P6 = to_net_input(p_centered);
    s.in.Q6 = to_net_input(q_centered.vertices);
    s.in.faces = s.faces.get();
    s.in.alpha = static_cast<float>(cfg.alpha);
    s.in.differentiate_normals = cfg.differentiate_normals;

    const int nq = static_cast<int>(q_centered.vertex_count());
    if (t.gt_map.source_size != nq || static_cast<int>(t.gt_map.target_indices.size()) != nq)
        throw InvalidInput("prepare_sample: gt_map does not cover Q");
    s.in.gt_pos.resize(3, nq);
    s.in.gt_n.resize(3, nq);
    for (int i = 0; i < nq; ++i) {
        const int ri = t.gt_map.target_indices[i];
        s.in.gt_pos.col(i) = r_centered.vertices.positions[ri].cast<float>();
        s.in.gt_n.col(i) = r_centered.vertices.normals[ri].cast<float>();
    }
    return s;
}

// ---------------------------------------------------------------------------
// Stepping

namespace {

int worker_count(int jobs) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 2;
    return std::max(1, std::min<int>(jobs, static_cast<int>(hw)));
}

// Runs fn(slot) for every slot on a small worker pool.
void parallel_slots(int slots, const std::function<void(int)>& fn) {
    const int nt = worker_count(slots);
    if (nt <= 1) {
        for (int i = 0; i < slots; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= slots) return;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

void scale_weights(NetworkWeightsT<float>& w, float s) {
    visit_tensors(w, [&](const std::string&, float* d, const std::vector<int>& dims) {
        std::int64_t n = 1;
        for (int x : dims) n *= x;
        for (std::int64_t i = 0; i < n; ++i) d[i] *= s;
    });
}

void add_weights(NetworkWeightsT<float>& dst, const NetworkWeightsT<float>& src) {
    std::vector<std::pair<const float*, std::int64_t>> from;
    visit_tensors(const_cast<NetworkWeightsT<float>&>(src),
                  [&](const std::string&, float* d, const std::vector<int>& dims) {
                      std::int64_t n = 1;
                      for (int x : dims) n *= x;
                      from.push_back({d, n});
                  });
    std::size_t k = 0;
    visit_tensors(dst, [&](const std::string&, float* d, const std::vector<int>& dims) {
        std::int64_t n = 1;
        for (int x : dims) n *= x;
        for (std::int64_t i = 0; i < n; ++i) d[i] += from[k].first[i];
        ++k;
    });
}

}  // namespace

float train_step(const std::vector<TrainSample>& batch, NetworkWeights& weights,
                 AdamState& state, const TrainConfig& cfg) {
    if (batch.empty()) throw InvalidInput("train_step: empty batch");
    const int n = static_cast<int>(batch.size());

    std::vector<NetworkWeights> slot_grads(n);
    std::vector<float> slot_loss(n);
    for (auto& g : slot_grads) g = make_zero_like(weights);

    parallel_slots(n, [&](int i) {
        TripletTrace<float> trace;
        slot_loss[i] = triplet_forward(batch[i].in, weights, &trace);
        triplet_backward(batch[i].in, weights, trace, slot_grads[i]);
    });

    // fixed merge order: gradient bytes do not depend on the thread count
    NetworkWeights total = std::move(slot_grads[0]);
    for (int i = 1; i < n; ++i) add_weights(total, slot_grads[i]);
    scale_weights(total, 1.0f / static_cast<float>(n));

    adam_step(weights, total, state, static_cast<float>(cfg.lr), static_cast<float>(cfg.beta1));

    float loss_sum = 0.0f;
    for (int i = 0; i < n; ++i) loss_sum += slot_loss[i];
    return loss_sum / static_cast<float>(n);
}

double mean_loss(const std::vector<TrainSample>& samples, const NetworkWeights& weights) {
    if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> losses(samples.size());
    parallel_slots(static_cast<int>(samples.size()), [&](int i) {
        losses[i] = triplet_forward<float>(samples[i].in, weights, static_cast<TripletTrace<float>*>(nullptr));
    });
    double sum = 0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(samples.size());
}

std::uint64_t triplet_seed(const TrainConfig& cfg, int epoch, int step, int slot) {
    return mix_seed(cfg.seed, 0x7261696eULL,
                    (static_cast<std::uint64_t>(epoch) << 40)
                        ^ (static_cast<std::uint64_t>(step) << 8) ^ static_cast<std::uint64_t>(slot));
}

std::uint64_t validation_seed(const TrainConfig& cfg, int index) {
    return mix_seed(cfg.seed, 0x76616cULL, static_cast<std::uint64_t>(index));
}

// ---------------------------------------------------------------------------
// The loop

namespace {

constexpr int kValidationTriplets = 100;

std::string csv_of_history(const Checkpoint& ck) {
    std::string out = "epoch,train_loss,val_loss\n";
    char buf[96];
    for (std::size_t e = 0; e < ck.train_loss_history.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", e,
                      static_cast<double>(ck.train_loss_history[e]),
                      static_cast<double>(ck.val_loss_history[e]));
        out += buf;
    }
    return out;
}

}  // namespace

Checkpoint train_loop(const TrainConfig& cfg, const DatasetSpec& spec, const TrainPaths& paths,
                      const Checkpoint* resume_from) {
    cfg.validate();
    Checkpoint ck;
    if (resume_from) {
        ck = *resume_from;
    } else {
        ck.config = cfg;
        ck.weights = init_weights(cfg.seed);
        ck.adam = make_adam_state(ck.weights);
        ck.epoch = 0;
    }

    TemplateCache cache;
    const SkinnedTemplate* fixed_tmpl =
        cfg.mode == TrainMode::fixed_template ? &cache.get(cfg.template_subject_id) : nullptr;

    // fixed validation set, held-out subjects
    std::vector<TrainSample> val_set;
    if (spec.val_subjects > 0) {
        val_set.resize(kValidationTriplets);
        parallel_slots(kValidationTriplets, [&](int i) {
            Triplet t = sample_triplet(spec, validation_seed(cfg, i), Split::val, &cache);
            if (fixed_tmpl) t = substitute_template(std::move(t), *fixed_tmpl);
            val_set[i] = prepare_sample(t, cfg);
        });
    }

    const int steps = std::max(1, cfg.triplets_per_epoch / cfg.batch_size);

    auto persist = [&]() {
        if (!paths.checkpoint.empty()) save_checkpoint(paths.checkpoint, ck);
        if (!paths.log_csv.empty()) atomic_write_text(paths.log_csv, csv_of_history(ck));
    };

    if (cfg.epochs == 0 || ck.epoch >= cfg.epochs) {
        persist();
        return ck;
    }

    std::vector<TrainSample> batch(cfg.batch_size);
    for (int epoch = ck.epoch; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int step = 0; step < steps; ++step) {
            parallel_slots(cfg.batch_size, [&](int slot) {
                Triplet t =
                    sample_triplet(spec, triplet_seed(cfg, epoch, step, slot), Split::train, &cache);
                if (fixed_tmpl) t = substitute_template(std::move(t), *fixed_tmpl);
                batch[slot] = prepare_sample(t, cfg);
            });
            epoch_loss += train_step(batch, ck.weights, ck.adam, cfg);
        }
        ck.epoch = epoch + 1;
        ck.train_loss_history.push_back(static_cast<float>(epoch_loss / steps));
        ck.val_loss_history.push_back(static_cast<float>(mean_loss(val_set, ck.weights)));
        persist();
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

namespace {

constexpr char kMagic[4] = {'N', 'R', 'S', 'W'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
    std::string buf;

    void bytes(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        bytes(b, 4);
    }
    void f32(float v) {
        static_assert(sizeof(float) == 4);
        bytes(&v, 4);  // little-endian host
    }
};

struct Reader {
    std::string data;
    std::size_t at = 0;
    std::string path;

    [[noreturn]] void corrupt(const std::string& msg) const {
        throw CorruptCheckpoint(path + ": " + msg + " at byte " + std::to_string(at));
    }
    void bytes(void* p, std::size_t n) {
        if (at + n > data.size()) corrupt("truncated");
        std::memcpy(p, data.data() + at, n);
        at += n;
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8)
               | (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    float f32() {
        float v;
        bytes(&v, 4);
        return v;
    }
    std::string str(std::size_t n) {
        if (at + n > data.size()) corrupt("truncated string");
        std::string s = data.substr(at, n);
        at += n;
        return s;
    }
};

json config_to_json(const TrainConfig& c) {
    return json{{"batch_size", c.batch_size},
                {"lr", c.lr},
                {"beta1", c.beta1},
                {"epochs", c.epochs},
                {"triplets_per_epoch", c.triplets_per_epoch},
                {"alpha", c.alpha},
                {"seed", c.seed},
                {"mode", to_string(c.mode)},
                {"template_subject_id", c.template_subject_id},
                {"differentiate_normals", c.differentiate_normals}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.triplets_per_epoch = j.at("triplets_per_epoch").get<int>();
    c.alpha = j.at("alpha").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mode = train_mode_from_string(j.at("mode").get<std::string>());
    c.template_subject_id = j.at("template_subject_id").get<int>();
    c.differentiate_normals = j.at("differentiate_normals").get<bool>();
    return c;
}

void write_tensor(Writer& w, const std::string& name, const float* data,
                  const std::vector<int>& dims) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) w.u32(static_cast<std::uint32_t>(d));
    if (dims.size() == 2) {
        const int rows = dims[0], cols = dims[1];
        for (int r = 0; r < rows; ++r)  // row-major on disk, column-major in memory
            for (int c = 0; c < cols; ++c) w.f32(data[static_cast<std::size_t>(c) * rows + r]);
    } else {
        std::int64_t n = 1;
        for (int d : dims) n *= d;
        for (std::int64_t i = 0; i < n; ++i) w.f32(data[i]);
    }
}

void read_tensor_into(Reader& r, const std::string& want_name, float* data,
                      const std::vector<int>& want_dims) {
    const std::size_t start = r.at;
    std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    if (name != want_name) {
        r.at = start;
        r.corrupt("expected tensor '" + want_name + "', found '" + name + "'");
    }
    std::uint32_t rank = r.u32();
    if (rank != want_dims.size()) r.corrupt("tensor '" + name + "' has wrong rank");
    std::int64_t n = 1;
    for (std::size_t i = 0; i < want_dims.size(); ++i) {
        std::uint32_t d = r.u32();
        if (d != static_cast<std::uint32_t>(want_dims[i]))
            r.corrupt("tensor '" + name + "' dimension mismatch");
        n *= d;
    }
    if (want_dims.size() == 2) {
        const int rows = want_dims[0], cols = want_dims[1];
        for (int row = 0; row < rows; ++row)
            for (int c = 0; c < cols; ++c)
                data[static_cast<std::size_t>(c) * rows + row] = r.f32();
    } else {
        for (std::int64_t i = 0; i < n; ++i) data[i] = r.f32();
    }
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);

    json j = config_to_json(ck.config);
    j["epoch"] = ck.epoch;
    j["adam_t"] = ck.adam.t;
    const std::string cfg_text = j.dump();
    w.u32(static_cast<std::uint32_t>(cfg_text.size()));
    w.bytes(cfg_text.data(), cfg_text.size());

    // tensor records: weights, adam moments, loss history
    std::vector<std::tuple<std::string, const float*, std::vector<int>>> tensors;
    auto& weights = const_cast<NetworkWeights&>(ck.weights);
    std::size_t idx = 0;
    visit_tensors(weights, [&](const std::string& name, float* d, const std::vector<int>& dims) {
        tensors.push_back({name, d, dims});
        tensors.push_back({name + ".adam_m", ck.adam.m[idx].data(),
                           {static_cast<int>(ck.adam.m[idx].size())}});
        tensors.push_back({name + ".adam_v", ck.adam.v[idx].data(),
                           {static_cast<int>(ck.adam.v[idx].size())}});
        ++idx;
    });
    tensors.push_back({"history.train_loss", ck.train_loss_history.data(),
                       {static_cast<int>(ck.train_loss_history.size())}});
    tensors.push_back({"history.val_loss", ck.val_loss_history.data(),
                       {static_cast<int>(ck.val_loss_history.size())}});

    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, data, dims] : tensors) write_tensor(w, name, data, dims);

    atomic_write_text(path, w.buf);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptCheckpoint(path.string() + ": cannot open");
    Reader r;
    r.path = path.string();
    {
        std::stringstream buf;
        buf << in.rdbuf();
        r.data = buf.str();
    }

    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw CorruptCheckpoint(path.string() + ": bad magic at byte 0");
    std::uint32_t version = r.u32();
    if (version != kVersion)
        throw UnsupportedVersion(path.string() + ": format version " + std::to_string(version)
                                 + " is not supported (expected "
                                 + std::to_string(kVersion) + ")");

    std::uint32_t cfg_len = r.u32();
    std::string cfg_text = r.str(cfg_len);
    Checkpoint ck;
    json j;
    try {
        j = json::parse(cfg_text);
        ck.config = config_from_json(j);
        ck.epoch = j.at("epoch").get<int>();
    } catch (const json::exception& e) {
        throw CorruptCheckpoint(path.string() + ": bad config block: " + e.what());
    }

    // reconstruct architecture-shaped storage, then fill strictly in order
    ck.weights = init_weights(0);
    ck.adam = make_adam_state(ck.weights);
    ck.adam.t = j.at("adam_t").get<std::int64_t>();

    std::uint32_t tensor_count = r.u32();
    std::size_t expected = 0;
    visit_tensors(ck.weights, [&](const std::string&, float*, const std::vector<int>&) {
        expected += 3;
    });
    expected += 2;
    if (tensor_count != expected) r.corrupt("unexpected tensor count");

    std::size_t idx = 0;
    visit_tensors(ck.weights, [&](const std::string& name, float* d, const std::vector<int>& dims) {
        read_tensor_into(r, name, d, dims);
        read_tensor_into(r, name + ".adam_m", ck.adam.m[idx].data(),
                         {static_cast<int>(ck.adam.m[idx].size())});
        read_tensor_into(r, name + ".adam_v", ck.adam.v[idx].data(),
                         {static_cast<int>(ck.adam.v[idx].size())});
        ++idx;
    });

    // histories carry their own length in the dims field
    auto read_history = [&](const std::string& name, std::vector<float>& out) {
        const std::size_t start = r.at;
        std::uint32_t name_len = r.u32();
        std::string got = r.str(name_len);
        if (got != name) {
            r.at = start;
            r.corrupt("expected tensor '" + name + "'");
        }
        if (r.u32() != 1) r.corrupt("history tensor must be rank 1");
        std::uint32_t n = r.u32();
        out.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) out[i] = r.f32();
    };
    read_history("history.train_loss", ck.train_loss_history);
    read_history("history.val_loss", ck.val_loss_history);

    if (r.at != r.data.size()) r.corrupt("trailing bytes");
    return ck;
}

}  // namespace nrsc
