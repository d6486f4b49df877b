"""
推理引擎测试
"""

import json
import statistics
import threading
import time

import pytest
from PIL import Image

from detector_extension.modules.exceptions import (
    FrameMismatch,
    InvalidBox,
    LabelSetMismatch,
    StageFailure,
)
from detector_extension.modules.inference_engine import (
    BoundingBox,
    Frame,
    PipelineSlot,
    PredictionObject,
    SlotState,
    correct_prediction,
    crop_box,
    load_frame_directory,
    run_dual_parallel,
    run_sequential,
)
from detector_extension.modules.mock_backends import (
    LatencyModel,
    build_scenario,
    frames_from_scenario,
    generate_scenario,
    mock_classifier,
    mock_detector,
)

from .helpers import (
    CLASSIFIER_LABELS,
    EchoClassifier,
    FailingClassifier,
    FixedClassifier,
    ScriptedDetector,
    detection,
    make_frames,
)


def _dump(outputs):
    return [json.dumps(prediction.to_record(), sort_keys=True) for prediction in outputs]


class TestCropBox:
    """裁剪区域测试"""

    def test_no_padding(self):
        """测试不扩展时裁剪区域不变"""
        frame = Frame(0, 100, 100)
        box = BoundingBox(10, 10, 20, 20)
        assert crop_box(frame, box, 0) == box

    def test_padding(self):
        """测试按比例扩展"""
        frame = Frame(0, 100, 100)
        assert crop_box(frame, BoundingBox(10, 10, 20, 20), 0.1) == BoundingBox(9, 9, 21, 21)

    def test_clamped_at_origin(self):
        """测试扩展后在原点处截断"""
        frame = Frame(0, 100, 100)
        assert crop_box(frame, BoundingBox(0, 0, 10, 10), 0.5) == BoundingBox(0, 0, 15, 15)

    def test_clamped_at_far_edge(self):
        """测试扩展后在远端边界截断"""
        frame = Frame(0, 100, 50)
        assert crop_box(frame, BoundingBox(80, 30, 100, 50), 0.5) == BoundingBox(70, 20, 100, 50)

    def test_box_outside_frame(self):
        """测试边界框超出帧"""
        with pytest.raises(InvalidBox) as exc_info:
            crop_box(Frame(4, 100, 100), BoundingBox(90, 90, 110, 100))
        assert exc_info.value.frame_index == 4

    def test_negative_padding(self):
        """测试负扩展比例"""
        with pytest.raises(ValueError):
            crop_box(Frame(0, 100, 100), BoundingBox(10, 10, 20, 20), -0.1)


class TestCorrectPrediction:
    """单帧校正测试"""

    def test_incompatible_detection_untouched(self, vehicle_compat):
        """测试非兼容类别的检测不变"""
        frame = Frame(0, 100, 100)
        prediction = PredictionObject(0, (detection("Person", [10, 10, 30, 60]),))
        classifier = FixedClassifier("Van", 0.9, CLASSIFIER_LABELS)

        result = correct_prediction(frame, prediction, classifier, vehicle_compat)

        assert result == prediction
        assert classifier.calls == []

    def test_compatible_detection_relabeled(self, vehicle_compat):
        """测试兼容类别的检测被重新分类"""
        frame = Frame(0, 100, 100)
        prediction = PredictionObject(0, (detection("Truck", [10, 10, 50, 40], 0.55),))
        classifier = FixedClassifier("Van", 0.9, CLASSIFIER_LABELS)

        result = correct_prediction(frame, prediction, classifier, vehicle_compat)

        corrected = result.detections[0]
        assert corrected.class_label == "Van"
        assert corrected.confidence == 0.9
        assert corrected.corrected
        assert corrected.box == BoundingBox(10, 10, 50, 40)
        assert len(classifier.calls) == 1

    def test_only_compatible_detections_rescored(self, vehicle_compat):
        """测试只有兼容类别的检测被重新打分"""
        frame = Frame(0, 100, 100)
        boxes = {"Car": (0, 0, 10, 10), "Dog": (20, 20, 30, 30), "Bus": (40, 40, 60, 60)}
        prediction = PredictionObject(0, tuple(detection(label, box) for label, box in boxes.items()))
        classifier = EchoClassifier(
            {(0, boxes["Car"]): "Car", (0, boxes["Bus"]): "Van"}, CLASSIFIER_LABELS)

        result = correct_prediction(frame, prediction, classifier, vehicle_compat)

        assert [d.class_label for d in result.detections] == ["Car", "Dog", "Van"]
        assert [d.corrected for d in result.detections] == [True, False, True]
        assert result.detections[1] == prediction.detections[1]
        assert len(classifier.calls) == 2

    def test_classifier_receives_padded_region(self, vehicle_compat):
        """测试分类器收到扩展后的区域"""
        frame = Frame(0, 100, 100)
        prediction = PredictionObject(0, (detection("Car", [10, 10, 20, 20]),))
        classifier = FixedClassifier("Van", 0.9, CLASSIFIER_LABELS)

        correct_prediction(frame, prediction, classifier, vehicle_compat, pad_fraction=0.1)
        assert classifier.calls == [(0, BoundingBox(9, 9, 21, 21))]

    def test_frame_mismatch(self, vehicle_compat):
        """测试预测与帧不对应"""
        classifier = FixedClassifier("Van", 0.9, CLASSIFIER_LABELS)
        with pytest.raises(FrameMismatch):
            correct_prediction(Frame(0, 100, 100), PredictionObject(1), classifier, vehicle_compat)

    def test_missing_labels(self, vehicle_compat):
        """测试分类器缺少标签"""
        classifier = FixedClassifier("Van", 0.9, ["Van", "Car"])
        with pytest.raises(LabelSetMismatch) as exc_info:
            correct_prediction(Frame(0, 100, 100), PredictionObject(0), classifier, vehicle_compat)
        assert exc_info.value.missing == ["Bus", "Truck"]

    def test_label_outside_declared_set(self, vehicle_compat):
        """测试分类器返回声明集合之外的标签"""
        prediction = PredictionObject(0, (detection("Car", [10, 10, 20, 20]),))
        classifier = FixedClassifier("Tram", 0.9, CLASSIFIER_LABELS)
        with pytest.raises(LabelSetMismatch):
            correct_prediction(Frame(0, 100, 100), prediction, classifier, vehicle_compat)


class TestRunSequential:
    """顺序执行测试"""

    def test_empty_stream(self, vehicle_compat):
        """测试空帧流"""
        outputs, stats = run_sequential(
            [], ScriptedDetector(), FixedClassifier("Van", 0.8, CLASSIFIER_LABELS), vehicle_compat)
        assert outputs == []
        assert stats.frames_processed == 0

    def test_only_detected_frame_relabeled(self, vehicle_compat):
        """测试只有含兼容检测的帧被改写"""
        detector = ScriptedDetector({1: [detection("Car", [10, 10, 40, 40])]})
        classifier = FixedClassifier("Van", 0.8, CLASSIFIER_LABELS)

        outputs, stats = run_sequential(make_frames(3), detector, classifier, vehicle_compat)

        assert [p.frame_index for p in outputs] == [0, 1, 2]
        assert outputs[0].detections == () and outputs[2].detections == ()
        assert outputs[1].detections[0].class_label == "Van"
        assert outputs[1].detections[0].confidence == 0.8
        assert stats.classifier_invocations == 1
        assert stats.detections_corrected == 1

    def test_no_compatible_classes(self, vehicle_compat):
        """测试没有兼容类别的检测时输出与检测结果一致"""
        raw = {k: [detection("Person", [5, 5, 25, 50]), detection("Dog", [50, 50, 70, 90])] for k in range(4)}
        detector = ScriptedDetector(raw)

        outputs, stats = run_sequential(
            make_frames(4), detector, FixedClassifier("Van", 0.8, CLASSIFIER_LABELS), vehicle_compat)

        assert outputs == [detector.detect(frame) for frame in make_frames(4)]
        assert stats.classifier_invocations == 0
        assert stats.total_detections == 8

    def test_label_check_happens_before_any_frame(self, vehicle_compat):
        """测试标签检查先于处理任何帧"""
        detector = ScriptedDetector(fail_at=0)
        with pytest.raises(LabelSetMismatch):
            run_sequential(make_frames(2), detector, FixedClassifier("Van", 0.8, ["Van"]), vehicle_compat)

    def test_out_of_order_frames(self, vehicle_compat):
        """测试帧序号不连续"""
        frames = [Frame(0, 10, 10), Frame(2, 10, 10)]
        with pytest.raises(StageFailure) as exc_info:
            run_sequential(frames, ScriptedDetector(), FixedClassifier("Van", 0.8, CLASSIFIER_LABELS),
                           vehicle_compat)
        assert isinstance(exc_info.value.cause, FrameMismatch)
        assert len(exc_info.value.partial_outputs) == 1


@pytest.mark.parametrize("runner", [run_sequential, run_dual_parallel])
class TestStageFailure:
    """阶段失败与部分输出"""

    def test_detector_failure(self, runner, vehicle_compat):
        """测试检测阶段失败"""
        detector = ScriptedDetector({k: [detection("Truck", [10, 10, 40, 40])] for k in range(6)}, fail_at=3)

        with pytest.raises(StageFailure) as exc_info:
            runner(make_frames(6), detector, FixedClassifier("Van", 0.9, CLASSIFIER_LABELS), vehicle_compat)

        failure = exc_info.value
        assert failure.stage == "detector"
        assert failure.frame_index == 3
        assert [p.frame_index for p in failure.partial_outputs] == [0, 1, 2]
        assert isinstance(failure.cause, RuntimeError)

    def test_classifier_failure(self, runner, vehicle_compat):
        """测试校正阶段失败"""
        detector = ScriptedDetector({k: [detection("Truck", [10, 10, 40, 40])] for k in range(6)})

        with pytest.raises(StageFailure) as exc_info:
            runner(make_frames(6), detector, FailingClassifier(2, CLASSIFIER_LABELS), vehicle_compat)

        failure = exc_info.value
        assert failure.stage == "corrector"
        assert failure.frame_index == 2
        assert [p.frame_index for p in failure.partial_outputs] == [0, 1]
        assert failure.to_dict()["error"]["code"] == "STAGE_FAILURE"

    def test_detector_returns_wrong_frame(self, runner, vehicle_compat):
        """测试检测器返回错误的帧序号"""
        class ShiftedDetector(ScriptedDetector):
            def detect(self, frame):
                return PredictionObject(frame.index + 1)

        with pytest.raises(StageFailure) as exc_info:
            runner(make_frames(3), ShiftedDetector(), FixedClassifier("Van", 0.9, CLASSIFIER_LABELS),
                   vehicle_compat)
        assert isinstance(exc_info.value.cause, FrameMismatch)
        assert exc_info.value.frame_index == 0


class TestRunDualParallel:
    """双并行执行测试"""

    def test_single_frame(self, vehicle_compat):
        """测试单帧"""
        detector = ScriptedDetector({0: [detection("Bus", [10, 10, 40, 40])]})
        classifier = FixedClassifier("Van", 0.9, CLASSIFIER_LABELS)

        sequential, _ = run_sequential(make_frames(1), detector, classifier, vehicle_compat)
        parallel, stats = run_dual_parallel(make_frames(1), detector, classifier, vehicle_compat)

        assert parallel == sequential
        assert stats.mode == "dual_parallel"

    def test_empty_stream(self, vehicle_compat):
        """测试空帧流"""
        outputs, stats = run_dual_parallel(
            [], ScriptedDetector(), FixedClassifier("Van", 0.8, CLASSIFIER_LABELS), vehicle_compat)
        assert outputs == []
        assert stats.slot_events["produced"] == 0

    def test_slot_counters(self, vehicle_compat):
        """测试单槽事件计数"""
        detector = ScriptedDetector({k: [detection("Car", [10, 10, 40, 40])] for k in range(0, 20, 3)})
        outputs, stats = run_dual_parallel(
            make_frames(20), detector, FixedClassifier("Van", 0.8, CLASSIFIER_LABELS), vehicle_compat)

        assert len(outputs) == 20
        assert stats.slot_events == {
            "produced": 20, "consumed": 20, "overwritten_unconsumed": 0, "double_consumed": 0,
        }

    def test_matches_sequential_on_generated_scenarios(self, vehicle_compat):
        """测试100个随机场景在0-5ms抖动下双并行输出与顺序执行逐字节一致"""
        start = time.perf_counter()
        for seed in range(100):
            scenario = generate_scenario(seed, frame_count=8, track_count=4)
            latency = LatencyModel(0.0, 5.0)
            detector = mock_detector(scenario, latency)
            classifier = mock_classifier(scenario, scenario.classifier_labels, 0.8, latency)
            frames = frames_from_scenario(scenario)

            sequential, seq_stats = run_sequential(frames, detector, classifier, vehicle_compat)
            parallel, par_stats = run_dual_parallel(frames, detector, classifier, vehicle_compat)

            assert _dump(parallel) == _dump(sequential), f"seed {seed}"
            assert par_stats.classifier_invocations == seq_stats.classifier_invocations
            assert par_stats.slot_events["overwritten_unconsumed"] == 0
            assert par_stats.slot_events["double_consumed"] == 0

        assert time.perf_counter() - start < 60.0

    @pytest.mark.slow
    def test_throughput(self, vehicle_compat):
        """测试20ms检测器和10ms分类器下的吞吐量"""
        scenario = build_scenario({
            "seed": 1,
            "frames": 200,
            "size": [640, 480],
            "script": [
                {"frame": k, "box": [100, 100, 220, 200], "true": "Van", "emitted": "Truck",
                 "confidence": 0.7}
                for k in range(200)
            ],
        })
        detector = mock_detector(scenario, LatencyModel(20.0))
        classifier = mock_classifier(scenario, CLASSIFIER_LABELS, 1.0, LatencyModel(10.0))
        frames = frames_from_scenario(scenario)

        sequential_times, parallel_times = [], []
        for _ in range(5):
            _, seq_stats = run_sequential(frames, detector, classifier, vehicle_compat)
            _, par_stats = run_dual_parallel(frames, detector, classifier, vehicle_compat)
            assert par_stats.wall_time < seq_stats.wall_time
            sequential_times.append(seq_stats.wall_time)
            parallel_times.append(par_stats.wall_time)

        assert statistics.median(parallel_times) <= 1.15 * 200 * 0.020
        assert statistics.median(sequential_times) >= 5.5


class TestPipelineSlot:
    """单槽状态机测试"""

    def test_put_take_release(self):
        """测试放入、取出、释放"""
        slot = PipelineSlot()
        frame = Frame(0, 10, 10)
        assert slot.put(frame, PredictionObject(0))
        assert slot.state is SlotState.PRODUCED
        assert slot.take() == (frame, PredictionObject(0))
        slot.release()

        assert slot.state is SlotState.CONSUMED
        assert slot.counters()["consumed"] == 1

    def test_release_without_content(self):
        """测试空槽释放记为重复消费"""
        slot = PipelineSlot()
        slot.release()
        assert slot.counters()["double_consumed"] == 1

    def test_take_after_close_returns_none(self):
        """测试关闭后取出返回None"""
        slot = PipelineSlot()
        slot.close()
        assert slot.take() is None

    def test_put_after_abort(self):
        """测试中止后无法放入"""
        slot = PipelineSlot()
        slot.abort()
        assert not slot.put(Frame(0, 10, 10), PredictionObject(0))

    def test_producer_waits_for_release(self):
        """测试生产者等待消费者释放"""
        slot = PipelineSlot()
        slot.put(Frame(0, 10, 10), PredictionObject(0))
        second_put = threading.Thread(target=slot.put, args=(Frame(1, 10, 10), PredictionObject(1)))
        second_put.start()
        second_put.join(timeout=0.05)
        assert second_put.is_alive()

        slot.take()
        slot.release()
        second_put.join(timeout=2)

        assert not second_put.is_alive()
        assert slot.take()[0].index == 1
        assert slot.counters()["overwritten_unconsumed"] == 0


class TestLoadFrameDirectory:
    """帧目录读取测试"""

    def test_reads_images_in_name_order(self, temp_dir):
        """测试按文件名顺序读取图像"""
        Image.new("RGB", (32, 24)).save(temp_dir / "b.png")
        Image.new("RGB", (64, 48)).save(temp_dir / "a.png")
        (temp_dir / "notes.txt").write_text("not an image", encoding="utf-8")

        frames = load_frame_directory(temp_dir)

        assert [(f.index, f.width, f.height) for f in frames] == [(0, 64, 48), (1, 32, 24)]
        assert frames[0].payload == (temp_dir / "a.png").read_bytes()

    def test_missing_directory(self, temp_dir):
        """测试目录不存在"""
        with pytest.raises(FileNotFoundError):
            load_frame_directory(temp_dir / "missing")
