#include "abw/serialization.hpp"

#include <fstream>
#include <sstream>

namespace abw {

namespace {

TensorData to_tensor(const std::vector<Vector>& vectors, std::uint32_t rows,
                     std::uint32_t cols) {
    TensorData t;
    t.dims = {rows, cols};
    t.values.reserve(std::size_t(rows) * cols);
    for (const auto& v : vectors) {
        for (int i = 0; i < v.size(); ++i) {
            t.values.push_back(float(v[i]));
        }
    }
    return t;
}

Vector row_of(const TensorData& t, std::size_t row, std::size_t cols) {
    Vector v(cols);
    for (std::size_t i = 0; i < cols; ++i) {
        v[Eigen::Index(i)] = double(t.values[row * cols + i]);
    }
    return v;
}

TensorData matrix_tensor(const Matrix& m) {
    TensorData t;
    t.dims = {std::uint32_t(m.rows()), std::uint32_t(m.cols())};
    t.values.reserve(m.size());
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            t.values.push_back(float(m(r, c)));
        }
    }
    return t;
}

Matrix tensor_matrix(const TensorData& t) {
    if (t.dims.size() != 2) {
        throw FileFormatError("expected a rank-2 tensor");
    }
    Matrix m(t.dims[0], t.dims[1]);
    for (std::uint32_t r = 0; r < t.dims[0]; ++r) {
        for (std::uint32_t c = 0; c < t.dims[1]; ++c) {
            m(r, c) = double(t.values[std::size_t(r) * t.dims[1] + c]);
        }
    }
    return m;
}

std::ofstream open_text(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string());
    }
    return out;
}

std::ifstream open_text_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return in;
}

} // namespace

void save_directions(const DirectionsTensor& dirs, const std::filesystem::path& tensor_path,
                     const std::filesystem::path& meta_path) {
    TensorData t;
    t.dims = {std::uint32_t(dirs.n_layers), std::uint32_t(dirs.n_dirs),
              std::uint32_t(dirs.hidden_dim)};
    t.values.reserve(t.element_count());
    for (const auto& v : dirs.directions) {
        for (int i = 0; i < v.size(); ++i) {
            t.values.push_back(float(v[i]));
        }
    }
    write_tensor(tensor_path, t);

    auto out = open_text(meta_path);
    out << "tag = " << to_string(dirs.tag) << "\n";
    for (const auto& m : dirs.meta) {
        out << "dir " << m.layer << " " << m.index << " class=" << m.class_label
            << " rank=" << m.singular_rank << " raw_norm=" << m.raw_norm
            << " singular_value=" << m.singular_value << " zero=" << (m.zero_flagged ? 1 : 0)
            << "\n";
    }
}

DirectionsTensor load_directions(const std::filesystem::path& tensor_path,
                                 const std::filesystem::path& meta_path) {
    const TensorData t = read_tensor(tensor_path);
    if (t.dims.size() != 3) {
        throw FileFormatError("directions tensor must be rank 3");
    }
    DirectionsTensor dirs;
    dirs.n_layers = int(t.dims[0]);
    dirs.n_dirs = int(t.dims[1]);
    dirs.hidden_dim = int(t.dims[2]);
    dirs.directions.resize(std::size_t(dirs.n_layers) * dirs.n_dirs);
    dirs.meta.resize(dirs.directions.size());
    for (std::size_t i = 0; i < dirs.directions.size(); ++i) {
        dirs.directions[i] = row_of(t, i, dirs.hidden_dim);
    }

    auto in = open_text_in(meta_path);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.rfind("tag = ", 0) == 0) {
            dirs.tag = extraction_tag_from_string(line.substr(6));
            continue;
        }
        if (line.rfind("dir ", 0) != 0) {
            continue;
        }
        std::istringstream ss(line.substr(4));
        DirectionMeta m;
        std::string field;
        ss >> m.layer >> m.index;
        while (ss >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) {
                continue;
            }
            const std::string key = field.substr(0, eq);
            const std::string value = field.substr(eq + 1);
            if (key == "class") {
                m.class_label = std::stoi(value);
            } else if (key == "rank") {
                m.singular_rank = std::stoi(value);
            } else if (key == "raw_norm") {
                m.raw_norm = std::stod(value);
            } else if (key == "singular_value") {
                m.singular_value = std::stod(value);
            } else if (key == "zero") {
                m.zero_flagged = value == "1";
            }
        }
        if (row < dirs.meta.size()) {
            dirs.meta[std::size_t(m.layer) * dirs.n_dirs + m.index] = m;
        }
        ++row;
    }
    return dirs;
}

void save_model(const ToyModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    TensorData attn;
    attn.dims = {std::uint32_t(model.n_layers), std::uint32_t(model.hidden_dim),
                 std::uint32_t(model.hidden_dim)};
    TensorData mlp = attn;
    attn.values.reserve(attn.element_count());
    mlp.values.reserve(mlp.element_count());
    for (int l = 0; l < model.n_layers; ++l) {
        for (int r = 0; r < model.hidden_dim; ++r) {
            for (int c = 0; c < model.hidden_dim; ++c) {
                attn.values.push_back(float(model.attn_out[l](r, c)));
                mlp.values.push_back(float(model.mlp_down[l](r, c)));
            }
        }
    }
    write_tensor(dir / "attn_out.abt", attn);
    write_tensor(dir / "mlp_down.abt", mlp);

    TensorData readout;
    readout.dims = {std::uint32_t(model.hidden_dim)};
    for (int i = 0; i < model.hidden_dim; ++i) {
        readout.values.push_back(float(model.refusal_readout[i]));
    }
    write_tensor(dir / "readout.abt", readout);
    write_tensor(dir / "unembed.abt", matrix_tensor(model.unembed));

    auto out = open_text(dir / "model.meta");
    out << "n_layers = " << model.n_layers << "\n";
    out << "hidden_dim = " << model.hidden_dim << "\n";
    out << "vocab_size = " << model.vocab_size << "\n";
    out << "readout_bias = " << model.readout_bias << "\n";
    out << "nonlinearity = "
        << (model.nonlinearity == Nonlinearity::tanh_elem ? "tanh" : "identity") << "\n";
    out << "router_layers =";
    for (int l : model.router_layers) {
        out << " " << l;
    }
    out << "\n";
    out << "injection_layers =";
    for (int l : model.injection_layers) {
        out << " " << l;
    }
    out << "\n";
}

ToyModel load_model(const std::filesystem::path& dir) {
    const TensorData attn = read_tensor(dir / "attn_out.abt");
    const TensorData mlp = read_tensor(dir / "mlp_down.abt");
    const TensorData readout = read_tensor(dir / "readout.abt");
    const TensorData unembed = read_tensor(dir / "unembed.abt");
    if (attn.dims.size() != 3 || mlp.dims.size() != 3 || readout.dims.size() != 1) {
        throw FileFormatError("model tensors have unexpected ranks");
    }

    ToyModel model;
    model.n_layers = int(attn.dims[0]);
    model.hidden_dim = int(attn.dims[1]);
    const std::size_t mat = std::size_t(model.hidden_dim) * model.hidden_dim;
    for (int l = 0; l < model.n_layers; ++l) {
        Matrix a(model.hidden_dim, model.hidden_dim);
        Matrix m(model.hidden_dim, model.hidden_dim);
        for (int r = 0; r < model.hidden_dim; ++r) {
            for (int c = 0; c < model.hidden_dim; ++c) {
                const std::size_t idx =
                    std::size_t(l) * mat + std::size_t(r) * model.hidden_dim + c;
                a(r, c) = double(attn.values[idx]);
                m(r, c) = double(mlp.values[idx]);
            }
        }
        model.attn_out.push_back(std::move(a));
        model.mlp_down.push_back(std::move(m));
    }
    model.refusal_readout = row_of(readout, 0, model.hidden_dim);
    model.unembed = tensor_matrix(unembed);
    model.vocab_size = int(model.unembed.rows());

    auto in = open_text_in(dir / "model.meta");
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) {
            continue;
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        if (key == "readout_bias") {
            model.readout_bias = std::stod(value);
        } else if (key == "nonlinearity") {
            model.nonlinearity =
                value == "identity" ? Nonlinearity::identity : Nonlinearity::tanh_elem;
        } else if (key == "router_layers" || key == "injection_layers") {
            std::istringstream ss(value);
            int l;
            auto& target =
                key == "router_layers" ? model.router_layers : model.injection_layers;
            while (ss >> l) {
                target.push_back(l);
            }
        }
    }
    return model;
}

namespace {

void save_record_group(const std::vector<const PromptRecord*>& records,
                       const std::filesystem::path& tensor_path,
                       const std::filesystem::path& meta_path) {
    if (records.empty()) {
        throw InvalidInputError("save_record_group: empty group");
    }
    const int L = int(records.front()->activations.size());
    const int D = int(records.front()->activations.front().size());
    TensorData t;
    t.dims = {std::uint32_t(records.size()), std::uint32_t(L), std::uint32_t(D)};
    t.values.reserve(t.element_count());
    for (const auto* rec : records) {
        for (const auto& a : rec->activations) {
            for (int i = 0; i < a.size(); ++i) {
                t.values.push_back(float(a[i]));
            }
        }
    }
    write_tensor(tensor_path, t);

    auto out = open_text(meta_path);
    for (const auto* rec : records) {
        out << rec->id << " category=" << rec->category << " harmful=" << (rec->harmful ? 1 : 0)
            << " contaminated=" << (rec->contaminated ? 1 : 0) << "\n";
    }
}

std::vector<PromptRecord> load_record_group(const std::filesystem::path& tensor_path,
                                            const std::filesystem::path& meta_path) {
    const TensorData t = read_tensor(tensor_path);
    if (t.dims.size() != 3) {
        throw FileFormatError("record tensor must be rank 3");
    }
    const std::size_t N = t.dims[0];
    const std::size_t L = t.dims[1];
    const std::size_t D = t.dims[2];

    std::vector<PromptRecord> records(N);
    for (std::size_t n = 0; n < N; ++n) {
        records[n].activations.reserve(L);
        for (std::size_t l = 0; l < L; ++l) {
            records[n].activations.push_back(row_of(t, n * L + l, D));
        }
    }

    auto in = open_text_in(meta_path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line) && n < N) {
        std::istringstream ss(line);
        std::string field;
        ss >> records[n].id;
        while (ss >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) {
                continue;
            }
            const std::string key = field.substr(0, eq);
            const std::string value = field.substr(eq + 1);
            if (key == "category") {
                records[n].category = std::stoi(value);
            } else if (key == "harmful") {
                records[n].harmful = value == "1";
            } else if (key == "contaminated") {
                records[n].contaminated = value == "1";
            }
        }
        ++n;
    }
    if (n != N) {
        throw FileFormatError("record metadata rows do not match tensor");
    }
    return records;
}

} // namespace

void save_pools(const PoolSet& pools, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_record_group(pools.all_harmful(), dir / "harmful.abt", dir / "harmful.meta");
    std::vector<const PromptRecord*> matched;
    for (const auto& grp : pools.matched_good) {
        for (const auto& r : grp) {
            matched.push_back(&r);
        }
    }
    save_record_group(matched, dir / "matched.abt", dir / "matched.meta");
    std::vector<const PromptRecord*> unmatched;
    for (const auto& r : pools.unmatched_good) {
        unmatched.push_back(&r);
    }
    save_record_group(unmatched, dir / "unmatched.abt", dir / "unmatched.meta");
}

PoolSet load_pools(const std::filesystem::path& dir) {
    const auto harmful = load_record_group(dir / "harmful.abt", dir / "harmful.meta");
    const auto matched = load_record_group(dir / "matched.abt", dir / "matched.meta");
    const auto unmatched = load_record_group(dir / "unmatched.abt", dir / "unmatched.meta");

    int n_cats = 0;
    for (const auto& r : harmful) {
        n_cats = std::max(n_cats, r.category + 1);
    }
    PoolSet pools;
    pools.harmful.resize(n_cats);
    pools.matched_good.resize(n_cats);
    for (const auto& r : harmful) {
        pools.harmful[r.category].push_back(r);
    }
    for (const auto& r : matched) {
        pools.matched_good[r.category].push_back(r);
    }
    pools.unmatched_good = unmatched;
    return pools;
}

void save_truth(const PlantedTruth& truth, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_tensor(dir / "centroids.abt",
                 to_tensor(truth.topic_centroids, std::uint32_t(truth.n_categories),
                           std::uint32_t(truth.hidden_dim)));
    write_tensor(dir / "benign.abt",
                 to_tensor(truth.benign_centroids, std::uint32_t(truth.benign_centroids.size()),
                           std::uint32_t(truth.hidden_dim)));
    write_tensor(dir / "tilts.abt",
                 to_tensor(truth.category_tilts, std::uint32_t(truth.n_categories),
                           std::uint32_t(truth.hidden_dim)));
    TensorData refusal;
    refusal.dims = {std::uint32_t(truth.hidden_dim)};
    for (int i = 0; i < truth.hidden_dim; ++i) {
        refusal.values.push_back(float(truth.refusal_dir[i]));
    }
    write_tensor(dir / "refusal.abt", refusal);
    TensorData profile;
    profile.dims = {std::uint32_t(truth.n_layers)};
    for (double p : truth.profile) {
        profile.values.push_back(float(p));
    }
    write_tensor(dir / "profile.abt", profile);
}

PlantedTruth load_truth(const std::filesystem::path& dir) {
    const TensorData centroids = read_tensor(dir / "centroids.abt");
    const TensorData benign = read_tensor(dir / "benign.abt");
    const TensorData tilts = read_tensor(dir / "tilts.abt");
    const TensorData refusal = read_tensor(dir / "refusal.abt");
    const TensorData profile = read_tensor(dir / "profile.abt");

    PlantedTruth truth;
    truth.n_categories = int(centroids.dims.at(0));
    truth.hidden_dim = int(centroids.dims.at(1));
    truth.n_layers = int(profile.dims.at(0));
    for (std::size_t c = 0; c < centroids.dims[0]; ++c) {
        truth.topic_centroids.push_back(row_of(centroids, c, truth.hidden_dim));
    }
    for (std::size_t c = 0; c < benign.dims[0]; ++c) {
        truth.benign_centroids.push_back(row_of(benign, c, truth.hidden_dim));
    }
    for (std::size_t c = 0; c < tilts.dims[0]; ++c) {
        truth.category_tilts.push_back(row_of(tilts, c, truth.hidden_dim));
    }
    truth.refusal_dir = row_of(refusal, 0, truth.hidden_dim);
    for (std::size_t l = 0; l < profile.dims[0]; ++l) {
        truth.profile.push_back(double(profile.values[l]));
    }
    return truth;
}

} // namespace abw
