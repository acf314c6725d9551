#include <gtest/gtest.h>

#include <httplib.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

namespace fs = std::filesystem;

namespace {

const std::string kCli = ESHARE_CLI;
const fs::path kScenarios = ESHARE_SCENARIO_DIR;

struct Output {
    int code = -1;
    std::string out;
};

Output run(const std::string& args) {
    Output o;
    const std::string cmd = kCli + " " + args + " 2>/dev/null";
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return o;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) o.out.append(buf.data(), n);
    const int status = ::pclose(p);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::uint16_t free_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> n{0};
        path = fs::temp_directory_path() / ("eshare-cli-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// A `serve` child process.
class Coordinator {
public:
    Coordinator(std::uint16_t port, const fs::path& data) : port_(port) {
        pid_ = ::fork();
        if (pid_ == 0) {
            const std::string p = std::to_string(port);
            ::execl(kCli.c_str(), kCli.c_str(), "--log-level", "warn", "serve", "--port", p.c_str(), "--data",
                    data.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
    }
    ~Coordinator() { kill(SIGKILL); }

    bool ready() const {
        httplib::Client c("127.0.0.1", port_);
        for (int i = 0; i < 200; ++i) {
            if (c.Get("/v1/microcells/none/listings")) return true;
            std::this_thread::sleep_for(std::chrono::milliseconds(25));
        }
        return false;
    }

    int kill(int sig) {
        if (pid_ <= 0) return -1;
        ::kill(pid_, sig);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
        return status;
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    std::uint16_t port_;
    pid_t pid_ = -1;
};

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("report").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, ScenarioExitCodes) {
    TempDir dir;
    const Output ok = run("scenario " + (kScenarios / "demo_amount.json").string());
    EXPECT_EQ(ok.code, 0);
    EXPECT_NE(ok.out.find("1000.000000"), std::string::npos);
    EXPECT_NE(ok.out.find("241/241"), std::string::npos);

    const Output csv = run("scenario " + (kScenarios / "demo_30min.json").string() + " --report csv");
    EXPECT_EQ(csv.code, 0);
    EXPECT_NE(csv.out.find("start_s,end_s,expended_mwh,gained_mwh,loss_mwh"), std::string::npos);
    EXPECT_NE(csv.out.find("1500.000000,1800.000000,250.000000,150.000000,100.000000"), std::string::npos);

    {
        std::ofstream bad(dir.path / "bad.json");
        bad << R"({"devices": []})";
    }
    EXPECT_EQ(run("scenario " + (dir.path / "bad.json").string()).code, 2);
    EXPECT_EQ(run("scenario " + (dir.path / "nope.json").string()).code, 2);

    {
        std::ifstream in(kScenarios / "demo_amount.json");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto at = text.find("\"provider_expended_mwh\": 1000");
        ASSERT_NE(at, std::string::npos);
        text.replace(at, std::string("\"provider_expended_mwh\": 1000").size(), "\"provider_expended_mwh\": 1001");
        std::ofstream out(dir.path / "wrong.json");
        out << text;
    }
    EXPECT_EQ(run("scenario " + (dir.path / "wrong.json").string()).code, 1);
}

TEST(Cli, ServeReportAndRecovery) {
    TempDir dir;
    const auto port = free_port();
    auto coord = std::make_unique<Coordinator>(port, dir.path / "data");
    ASSERT_TRUE(coord->ready());

    // A second server on the same port is refused.
    EXPECT_EQ(run("serve --port " + std::to_string(port) + " --data " + (dir.path / "other").string()).code, 2);

    const std::string url = "--coordinator-url " + coord->url();
    const Output sc = run(url + " scenario --external " + (kScenarios / "demo_30min.json").string());
    ASSERT_EQ(sc.code, 0) << sc.out;

    httplib::Client c("127.0.0.1", port);
    std::string tx;
    {
        std::ifstream ledger(dir.path / "data" / "ledger.jsonl");
        std::string line;
        while (std::getline(ledger, line)) {
            const auto k = line.find(R"("kind":"transaction","data":{"transaction_id":")");
            if (k != std::string::npos) tx = line.substr(k + 47, 32);
        }
    }
    ASSERT_EQ(tx.size(), 32u);

    const Output report = run(url + " report " + tx + " --bucket-s 300 --format csv");
    EXPECT_EQ(report.code, 0);
    EXPECT_EQ(std::count(report.out.begin(), report.out.end(), '\n'), 7);
    EXPECT_EQ(run(url + " report deadbeef").code, 1);

    auto before = c.Get("/v1/transactions/" + tx);
    ASSERT_TRUE(before);
    coord->kill(SIGKILL);
    EXPECT_EQ(run(url + " report " + tx).code, 1);

    coord = std::make_unique<Coordinator>(port, dir.path / "data");
    ASSERT_TRUE(coord->ready());
    httplib::Client c2("127.0.0.1", port);
    auto after = c2.Get("/v1/transactions/" + tx);
    ASSERT_TRUE(after);
    EXPECT_EQ(after->body, before->body);
    EXPECT_EQ(run(url + " report " + tx + " --format csv").out, report.out);
    EXPECT_EQ(coord->kill(SIGTERM), 0);
}
