// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "featsplat/camera.hpp"
#include "featsplat/decoder.hpp"
#include "featsplat/scene_io.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>

namespace featsplat {

struct ServiceConfig {
    std::size_t max_pixels = 4'000'000;
    int threads = 1;  // rasterizer/decoder threads per request
    std::filesystem::path static_dir;  // served under GET / when set
};

struct RenderRequest {
    Camera camera;
    EmbeddingOverrides overrides;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

/// Error with an HTTP status attached (400, 413, 422).
class RequestError : public std::runtime_error {
public:
    RequestError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

/// Parses a RenderRequest from JSON text. Throws RequestError(400) on malformed input.
RenderRequest parse_render_request(const std::string& body);

struct HttpReply {
    int status = 200;
    std::string content_type;
    std::string body;
};

/// Stateless request handling against an immutable scene snapshot.
class RenderService {
public:
    RenderService(LoadedScene scene, ServiceConfig config);

    /// JSON {n_gaussians, feature_dim, classes, embeddings: {pixel, campos, camrot}}.
    std::string info_json() const;

    /// POST /render. `layer` is "rgb" or "semantic".
    HttpReply render(const std::string& body, const std::string& layer) const;

    const LoadedScene& scene() const { return scene_; }
    const ServiceConfig& config() const { return config_; }

private:
    LoadedScene scene_;
    ServiceConfig config_;
};

/// HTTP front end. start() binds and serves on a background thread.
class ServiceHost {
public:
    explicit ServiceHost(std::shared_ptr<const RenderService> service);
    ~ServiceHost();
    ServiceHost(const ServiceHost&) = delete;
    ServiceHost& operator=(const ServiceHost&) = delete;

    /// Returns the bound port (useful with port 0). Throws on bind failure.
    int start(const std::string& host, int port);
    /// Blocks serving on the calling thread.
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace featsplat
