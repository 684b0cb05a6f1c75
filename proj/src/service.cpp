// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/service.hpp"

#include "featsplat/image_io.hpp"
#include "featsplat/losses.hpp"
#include "featsplat/trainer.hpp"

#include <httplib.h>
#include <json.hpp>

#include <thread>

namespace featsplat {

using nlohmann::json;

namespace {

std::vector<double> number_array(const json& j, const char* key, std::size_t n) {
    if (!j.contains(key)) throw RequestError(400, std::string("missing field '") + key + "'");
    const json& a = j.at(key);
    if (!a.is_array() || a.size() != n)
        throw RequestError(400, std::string("field '") + key + "' must be an array of " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (const auto& v : a) {
        if (!v.is_number()) throw RequestError(400, std::string("field '") + key + "' must contain numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

template <typename T>
T scalar(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number())
        throw RequestError(400, std::string("missing or non-numeric field '") + key + "'");
    return j.at(key).get<T>();
}

}  // namespace

RenderRequest parse_render_request(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw RequestError(400, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("camera") || !j["camera"].is_object())
        throw RequestError(400, "request needs a 'camera' object");

    RenderRequest req;
    const json& c = j["camera"];
    Camera& cam = req.camera;
    cam.width = scalar<int>(c, "w");
    cam.height = scalar<int>(c, "h");
    cam.fx = scalar<double>(c, "fx");
    cam.fy = scalar<double>(c, "fy");
    cam.cx = scalar<double>(c, "cx");
    cam.cy = scalar<double>(c, "cy");
    const auto r = number_array(c, "R", 9);
    const auto t = number_array(c, "t", 3);
    for (int i = 0; i < 9; ++i) cam.rotation_w2c(i / 3, i % 3) = r[i];
    for (int i = 0; i < 3; ++i) cam.translation_w2c[i] = t[i];
    try {
        cam.validate();
    } catch (const InvalidInput& e) {
        throw RequestError(400, e.what());
    }

    if (j.contains("overrides")) {
        const json& o = j["overrides"];
        if (!o.is_object()) throw RequestError(400, "'overrides' must be an object");
        for (const auto& [key, _] : o.items())
            if (key != "campos" && key != "pixel" && key != "camrot")
                throw RequestError(400, "unknown override '" + key + "'");
        if (o.contains("campos")) {
            const auto v = number_array(o, "campos", 3);
            req.overrides.campos = Eigen::Vector3d(v[0], v[1], v[2]);
        }
        if (o.contains("pixel")) {
            const auto v = number_array(o, "pixel", 2);
            req.overrides.pixel = Eigen::Vector2d(v[0], v[1]);
        }
        if (o.contains("camrot")) {
            const auto v = number_array(o, "camrot", 3);
            req.overrides.camrot = Eigen::Vector3d(v[0], v[1], v[2]);
        }
    }
    if (j.contains("background")) {
        const auto v = number_array(j, "background", 3);
        for (int i = 0; i < 3; ++i) {
            if (!(v[i] >= 0.0 && v[i] <= 1.0)) throw RequestError(400, "background components must lie in [0, 1]");
            req.background[i] = v[i];
        }
    }
    return req;
}

RenderService::RenderService(LoadedScene scene, ServiceConfig config)
    : scene_(std::move(scene)), config_(std::move(config)) {
    scene_.scene.validate();
    scene_.decoder.validate();
}

std::string RenderService::info_json() const {
    const EmbeddingConfig& e = scene_.decoder.config;
    json j;
    j["n_gaussians"] = scene_.scene.size();
    j["feature_dim"] = scene_.scene.feature_dim;
    j["classes"] = scene_.scene.class_count;
    j["embeddings"] = {{"pixel", e.use_pixel}, {"campos", e.use_campos}, {"camrot", e.use_camrot}};
    return j.dump();
}

HttpReply RenderService::render(const std::string& body, const std::string& layer) const {
    try {
        if (layer != "rgb" && layer != "semantic") throw RequestError(400, "layer must be 'rgb' or 'semantic'");
        const RenderRequest req = parse_render_request(body);
        const std::size_t pixels = static_cast<std::size_t>(req.camera.width) * req.camera.height;
        if (pixels > config_.max_pixels)
            throw RequestError(413, "requested " + std::to_string(pixels) + " pixels, limit is " +
                                        std::to_string(config_.max_pixels));
        try {
            req.overrides.check_against(scene_.decoder.config);
        } catch (const InvalidInput& e) {
            throw RequestError(422, e.what());
        }
        if (layer == "semantic" && scene_.decoder.class_count == 0)
            throw RequestError(422, "scene has no semantic head");

        const DecodedImage img = render_view(scene_.scene, scene_.decoder, req.camera, req.background, req.overrides,
                                             config_.threads);
        const auto png = layer == "semantic" ? encode_png_palette(argmax_labels(img.probs)) : encode_png_rgb(img.rgb);
        return {200, "image/png", std::string(png.begin(), png.end())};
    } catch (const RequestError& e) {
        return {e.status(), "application/json", json{{"error", e.what()}}.dump()};
    }
}

struct ServiceHost::Impl {
    std::shared_ptr<const RenderService> service;
    httplib::Server server;
    std::thread worker;
};

ServiceHost::ServiceHost(std::shared_ptr<const RenderService> service) : impl_(std::make_unique<Impl>()) {
    impl_->service = std::move(service);
    auto svc = impl_->service;
    impl_->server.Get("/scene/info", [svc](const httplib::Request&, httplib::Response& res) {
        res.set_content(svc->info_json(), "application/json");
    });
    impl_->server.Post("/render", [svc](const httplib::Request& req, httplib::Response& res) {
        const std::string layer = req.has_param("layer") ? req.get_param_value("layer") : "rgb";
        const HttpReply reply = svc->render(req.body, layer);
        res.status = reply.status;
        res.set_content(reply.body, reply.content_type.c_str());
    });
    if (!svc->config().static_dir.empty()) impl_->server.set_mount_point("/", svc->config().static_dir.string());
}

ServiceHost::~ServiceHost() { stop(); }

int ServiceHost::start(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void ServiceHost::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void ServiceHost::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace featsplat
