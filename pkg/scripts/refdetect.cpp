// Offline reference-detection generator: runs OpenCV's CascadeClassifier on
// 8-bit grayscale PNGs and prints the detections as JSON.
//
// Usage: refdetect cascade.xml scaleFactor minNeighbors minSize img1.png [img2.png ...]
#include <opencv2/objdetect.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <cstdio>
#include <cstdlib>
#include <vector>

int main(int argc, char** argv) {
    if (argc < 6) {
        std::fprintf(stderr, "usage: %s cascade.xml scaleFactor minNeighbors minSize img...\n", argv[0]);
        return 2;
    }
    cv::CascadeClassifier cc;
    if (!cc.load(argv[1])) {
        std::fprintf(stderr, "failed to load cascade %s\n", argv[1]);
        return 1;
    }
    double scaleFactor = std::atof(argv[2]);
    int minNeighbors = std::atoi(argv[3]);
    int minSize = std::atoi(argv[4]);

    std::printf("{");
    for (int i = 5; i < argc; i++) {
        cv::Mat gray = cv::imread(argv[i], cv::IMREAD_GRAYSCALE);
        if (gray.empty()) {
            std::fprintf(stderr, "failed to read %s\n", argv[i]);
            return 1;
        }
        std::vector<cv::Rect> faces;
        cc.detectMultiScale(gray, faces, scaleFactor, minNeighbors, 0,
                            cv::Size(minSize, minSize));
        std::printf("%s\n  \"%s\": [", i > 5 ? "," : "", argv[i]);
        for (size_t j = 0; j < faces.size(); j++)
            std::printf("%s[%d, %d, %d, %d]", j ? ", " : "",
                        faces[j].x, faces[j].y, faces[j].width, faces[j].height);
        std::printf("]");
    }
    std::printf("\n}\n");
    return 0;
}
