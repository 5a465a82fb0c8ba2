public class Monkey {
    /**
     * We have two monkeys and the params tell us if each monkey is smiling.
     * The result is Yes only if both of them are smiling or neither one is
     * smiling, and the result is No in every other case.
     * @param aSmile whether the first monkey is smiling
     * @param bSmile whether the second monkey is smiling
     * @return Yes when the two moods agree, otherwise No
     */
    public static String monkeyTrouble2(boolean aSmile, boolean bSmile) {
        if (aSmile == bSmile) {
            return "Yes";
        }
        return "No";
    }
}
